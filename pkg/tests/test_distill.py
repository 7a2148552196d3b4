"""Distillation objective, trainers, and rate diagnostics."""

import math

import numpy as np
import pytest

from mskd.composition import UnifiedWeightOperator, uniform_unified
from mskd.core import MarginViolated, StudentParams, WeightBounds
from mskd.distill import (
    InsufficientTrace,
    TrainerConfig,
    TrainTrace,
    average_traces,
    classic_uniform_train,
    compile_objective,
    fit_convergence_rate,
    kd_gradient,
    kd_loss,
    noisy_weight_train,
    sgd_train,
    solve_optimum,
)
from mskd.operators import ContextOperator, TaskOperator, TokenOperator
from mskd.worlds import appendix_world, convergence_world

WIDE = WeightBounds(0.01, 0.99)


def adaptive_g(bounds=WIDE):
    return UnifiedWeightOperator(TokenOperator("family_a"), TaskOperator("family_c"),
                                 ContextOperator("family_a"), bounds)


@pytest.fixture(scope="module")
def world():
    return convergence_world()


class TestKdLoss:
    def test_student_equal_target_gives_entropy(self):
        # one cell, so the target is a single distribution per input
        from mskd.core import entropy
        world = appendix_world()
        g = adaptive_g()
        compiled = compile_objective(g, world, 0.0)
        theta = np.log(compiled.qbar)
        loss = kd_loss(compiled.params(theta), g, world)
        assert loss == pytest.approx(entropy(compiled.qbar[0]), abs=1e-12)
        assert compiled.mean_kl(theta) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_student_cross_entropy_is_log_v(self):
        world = appendix_world()
        g = uniform_unified(WIDE)
        params = StudentParams((0,), np.zeros((1, 3)))
        assert kd_loss(params, g, world) == pytest.approx(math.log(3), abs=1e-12)

    def test_ridge_at_origin_adds_nothing(self):
        world = appendix_world()
        g = uniform_unified(WIDE)
        p0 = StudentParams((0,), np.zeros((1, 3)), ridge=0.0)
        p1 = StudentParams((0,), np.zeros((1, 3)), ridge=0.01)
        assert kd_loss(p0, g, world) == kd_loss(p1, g, world)


class TestKdGradient:
    def test_zero_at_matched_student(self, world):
        g = adaptive_g()
        compiled = compile_objective(g, world, 0.0)
        params = compiled.params(np.log(compiled.qbar))
        grad = kd_gradient(params, g, world)
        assert np.max(np.abs(grad)) < 1e-14

    def test_matches_central_differences(self, world):
        g = adaptive_g()
        rng = np.random.default_rng(0)
        h = 1e-5
        for ridge in (0.0, 0.01):
            compiled = compile_objective(g, world, ridge)
            for _ in range(4):
                theta = rng.normal(size=(len(world.inputs), world.vocab.size))
                grad = compiled.grad(theta)
                for _ in range(25):
                    xi = int(rng.integers(0, theta.shape[0]))
                    i = int(rng.integers(0, theta.shape[1]))
                    bump = np.zeros_like(theta)
                    bump[xi, i] = h
                    fd = (compiled.loss(theta + bump) - compiled.loss(theta - bump)) / (2 * h)
                    assert abs(fd - grad[xi, i]) <= 1e-6

    def test_ridge_term_alone(self, world):
        g = adaptive_g()
        compiled = compile_objective(g, world, 0.05)
        theta = np.log(compiled.qbar)  # CE part stationary there
        grad = compiled.grad(theta)
        np.testing.assert_allclose(grad, 0.05 * theta, atol=1e-13)


class TestSgdTrain:
    def test_zero_steps_returns_initial(self, world):
        cfg = TrainerConfig(eta0=1.0, steps=0, ridge=0.01, seed=1, eval_every=10)
        params, trace = sgd_train(cfg, adaptive_g(), world)
        np.testing.assert_array_equal(params.logits, 0.0)
        assert trace.steps.tolist() == [0]

    def test_uniform_matches_classic_bit_for_bit(self, world):
        cfg = TrainerConfig(eta0=1.0, steps=3000, ridge=0.01, seed=7, eval_every=500)
        p_uni, t_uni = sgd_train(cfg, uniform_unified(WIDE), world)
        p_classic, t_classic = classic_uniform_train(cfg, world)
        assert np.array_equal(p_uni.logits, p_classic.logits)
        assert np.array_equal(t_uni.loss, t_classic.loss)
        assert np.array_equal(t_uni.mean_kl, t_classic.mean_kl)
        assert np.array_equal(t_uni.grad_norm, t_classic.grad_norm)

    def test_reproducible_at_equal_seed(self, world):
        cfg = TrainerConfig(eta0=2.0, steps=500, ridge=0.01, seed=5,
                            eval_every=100, init_scale=0.5)
        p1, t1 = sgd_train(cfg, adaptive_g(), world)
        p2, t2 = sgd_train(cfg, adaptive_g(), world)
        assert np.array_equal(p1.logits, p2.logits)
        assert np.array_equal(t1.loss, t2.loss)

    def test_adaptive_differs_from_classic(self, world):
        cfg = TrainerConfig(eta0=1.0, steps=500, ridge=0.01, seed=7, eval_every=100)
        p_a, _ = sgd_train(cfg, adaptive_g(), world)
        p_c, _ = classic_uniform_train(cfg, world)
        assert not np.array_equal(p_a.logits, p_c.logits)


class TestFullBatch:
    def test_monotone_descent(self, world):
        g = adaptive_g()
        ridge = 0.01
        compiled = compile_objective(g, world, ridge)
        eta = 1.0 / (1.0 + ridge)
        theta = np.random.default_rng(2).normal(size=(len(world.inputs), world.vocab.size))
        prev = compiled.loss(theta)
        for _ in range(200):
            theta = theta - eta * compiled.grad(theta)
            cur = compiled.loss(theta)
            assert cur <= prev + 1e-12
            prev = cur

    def test_solver_reaches_tolerance(self, world):
        g = adaptive_g()
        params, loss_star = solve_optimum(g, world, 0.01, gtol=1e-10)
        compiled = compile_objective(g, world, 0.01)
        theta = np.array([params.row(x.id) for x in world.inputs])
        assert np.linalg.norm(compiled.grad(theta)) <= 1e-10
        assert compiled.loss(theta) == pytest.approx(loss_star)

    def test_ridge_free_optimum_is_log_target(self, world):
        g = adaptive_g()
        params, _ = solve_optimum(g, world, 0.0)
        compiled = compile_objective(g, world, 0.0)
        theta = np.array([params.row(x.id) for x in world.inputs])
        np.testing.assert_allclose(np.linalg.norm(compiled.grad(theta)), 0.0, atol=1e-14)
        # the per-input aggregate target is matched exactly, so its KL vanishes
        for xi in range(theta.shape[0]):
            p = params.distribution(world.inputs[xi].id)
            q = compiled.qbar[xi]
            kl = float(np.sum(q * (np.log(q) - np.log(p))))
            assert abs(kl) <= 1e-12


class TestRandomWorlds:
    """Gradient correctness over randomly generated worlds."""

    @staticmethod
    def _random_world(rng):
        from mskd.core import (ContextSpec, InputSpec, TaskSpec, TeacherBank,
                               VocabularySpec, World)
        v = int(rng.integers(3, 7))
        k = int(rng.integers(2, 5))
        n_inputs = int(rng.integers(2, 5))
        n_tasks = int(rng.integers(1, 3))
        n_ctx = int(rng.integers(1, 3))
        inputs = tuple(InputSpec(i, rng.normal(size=2)) for i in range(n_inputs))
        importances = rng.dirichlet(np.ones(n_tasks))
        tasks = tuple(
            TaskSpec(j, tuple(range(n_inputs)), rng.dirichlet(np.ones(n_inputs)),
                     importances[j])
            for j in range(n_tasks))
        mu = rng.dirichlet(np.ones(n_ctx))
        contexts = tuple(ContextSpec(c, rng.normal(size=1), mu[c],
                                     bool(rng.integers(0, 2)))
                         for c in range(n_ctx))
        table = {(x, c): rng.dirichlet(np.ones(v), size=k)
                 for x in range(n_inputs) for c in range(n_ctx)}
        perf = {j: rng.uniform(0.1, 0.9, size=k) for j in range(n_tasks)}
        bank = TeacherBank(k, table, perf, rng.uniform(0.1, 0.9, size=k))
        return World(VocabularySpec(v), inputs, tasks, contexts, bank)

    def test_gradient_matches_fd_on_100_random_draws(self):
        rng = np.random.default_rng(17)
        h = 1e-5
        for _ in range(10):
            world = self._random_world(rng)
            g = UnifiedWeightOperator(
                TokenOperator("family_a"), TaskOperator("family_c"),
                ContextOperator("family_a"), WeightBounds(1e-3, 0.999))
            compiled = compile_objective(g, world, float(rng.uniform(0, 0.05)))
            for _ in range(10):
                theta = rng.normal(size=(len(world.inputs), world.vocab.size))
                grad = compiled.grad(theta)
                for _ in range(5):
                    xi = int(rng.integers(0, theta.shape[0]))
                    i = int(rng.integers(0, theta.shape[1]))
                    bump = np.zeros_like(theta)
                    bump[xi, i] = h
                    fd = (compiled.loss(theta + bump)
                          - compiled.loss(theta - bump)) / (2 * h)
                    assert abs(fd - grad[xi, i]) <= 1e-6


class TestRateNonDegradation:
    def test_adaptive_and_uniform_slopes_agree(self, world):
        fits = {}
        for name, g in (("adaptive", adaptive_g()),
                        ("uniform", uniform_unified(WIDE))):
            _, loss_star = solve_optimum(g, world, 0.01, gtol=1e-10)
            traces = []
            for s in range(6):
                cfg = TrainerConfig(eta0=40.0, steps=30_000, ridge=0.01,
                                    seed=300 + s, eval_every=300, init_scale=0.5)
                _, tr = sgd_train(cfg, g, world)
                traces.append(tr)
            fits[name] = fit_convergence_rate(average_traces(traces), loss_star).slope
        assert abs(fits["adaptive"] - fits["uniform"]) <= 0.2


class TestRateFit:
    def _trace(self, gap_fn, t_grid):
        loss = np.array([2.0 + gap_fn(t) for t in t_grid])
        return TrainTrace(np.array(t_grid), loss, loss * 0, loss * 0,
                          1.0 / (1.0 + np.array(t_grid, dtype=float)))

    def test_exact_inverse_t(self):
        trace = self._trace(lambda t: 5.0 / t, list(range(10, 2000, 50)))
        fit = fit_convergence_rate(trace, 2.0)
        assert fit.slope == pytest.approx(-1.0, abs=1e-6)
        assert fit.constant == pytest.approx(5.0, abs=1e-6)

    def test_square_root_control(self):
        trace = self._trace(lambda t: 3.0 / math.sqrt(t), list(range(10, 2000, 50)))
        fit = fit_convergence_rate(trace, 2.0)
        assert fit.slope == pytest.approx(-0.5, abs=1e-6)

    def test_insufficient_trace(self):
        trace = self._trace(lambda t: 1.0 / t, [1, 2, 3, 4, 5])
        with pytest.raises(InsufficientTrace):
            fit_convergence_rate(trace, 2.0)

    def test_average_traces_requires_same_grid(self):
        t1 = self._trace(lambda t: 1.0 / t, [1, 2, 3] + list(range(10, 100, 10)))
        avg = average_traces([t1, t1])
        np.testing.assert_array_equal(avg.loss, t1.loss)


class TestNoisyTrain:
    def test_zero_delta_identical_to_clean(self, world):
        cfg = TrainerConfig(eta0=1.0, steps=400, ridge=0.01, seed=3, eval_every=100)
        g = adaptive_g(WeightBounds(0.05, 0.95))
        p_clean, t_clean = sgd_train(cfg, g, world)
        p_noisy, t_noisy = noisy_weight_train(cfg, g, world, 0.0)
        assert np.array_equal(p_clean.logits, p_noisy.logits)
        assert np.array_equal(t_clean.loss, t_noisy.loss)

    def test_margin_violation_raises(self, world):
        cfg = TrainerConfig(eta0=1.0, steps=10, ridge=0.01, seed=3, eval_every=10)
        g = adaptive_g(WeightBounds(0.05, 0.95))
        with pytest.raises(MarginViolated):
            noisy_weight_train(cfg, g, world, 0.44)

    def test_terminal_gap_scales_with_delta(self, world):
        g = adaptive_g(WeightBounds(0.05, 0.95))
        _, loss_star = solve_optimum(g, world, 0.01, gtol=1e-10)
        deltas = [0.001, 0.01, 0.05]
        gaps = []
        for d in deltas:
            cfg = TrainerConfig(eta0=40.0, steps=30_000, ridge=0.01, seed=11,
                                eval_every=6000, init_scale=0.5)
            params, _ = noisy_weight_train(cfg, g, world, d)
            gaps.append(kd_loss(params, g, world) - loss_star)
        d = np.array(deltas)
        gp = np.array(gaps)
        slope = float(np.sum(gp * d) / np.sum(d * d))
        r2 = 1.0 - float(np.sum((gp - slope * d) ** 2) / np.sum(gp ** 2))
        assert r2 >= 0.9


class TestTraceSerialization:
    def test_round_trip_columns(self, tmp_path, world):
        cfg = TrainerConfig(eta0=1.0, steps=200, ridge=0.01, seed=0, eval_every=50)
        _, trace = sgd_train(cfg, adaptive_g(), world)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "step,loss,mean_kl,grad_norm,lr"
        assert len(lines) == len(trace.steps) + 1
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert float(first[1]) == trace.loss[0]
