"""Weight-update dynamics: contraction, fixed points, robustness, variance."""

import numpy as np
import pytest

from mskd.composition import UnifiedWeightOperator, uniform_unified
from mskd.core import MarginViolated, StudentParams, WeightBounds, seeded_sampler
from mskd.dynamics import (
    WeightUpdateConfig,
    estimate_contraction,
    gradient_variance_ratio,
    iterate_to_fixed_point,
    perturbation_experiment,
    sample_feasible_weights,
    weight_update_T,
)
from mskd.operators import ContextOperator, TaskOperator, TokenOperator, uniform_weights
from mskd.worlds import appendix_world, convergence_world, identical_teachers_world

BOUNDS = WeightBounds(0.05, 0.95)


def adaptive_g(bounds=WeightBounds(0.05, 0.95)):
    return UnifiedWeightOperator(TokenOperator("family_a"), TaskOperator("family_c"),
                                 ContextOperator("family_a"), bounds)


class TestConstantTargetControl:
    def test_update_is_affine_with_ratio_one_minus_beta(self):
        world = identical_teachers_world(3)
        bounds = WeightBounds(0.01, 0.99)
        beta = 0.3
        sampler = seeded_sampler(0)
        for _ in range(20):
            w = sample_feasible_weights(3, bounds, sampler)
            w2 = sample_feasible_weights(3, bounds, sampler)
            num = np.max(np.abs(weight_update_T(w, beta, world, bounds)
                                - weight_update_T(w2, beta, world, bounds)))
            den = np.max(np.abs(w - w2))
            if den > 1e-12:
                assert num / den == pytest.approx(1.0 - beta, abs=1e-9)

    def test_estimated_ratio_matches_one_minus_beta(self):
        world = identical_teachers_world(3)
        bounds = WeightBounds(0.01, 0.99)
        cfg = WeightUpdateConfig(beta=0.3)
        rho = estimate_contraction(cfg, world, bounds, seeded_sampler(1), 100)
        assert rho == pytest.approx(0.7, abs=1e-9)

    def test_full_step_converges_immediately(self):
        world = identical_teachers_world(2)
        bounds = WeightBounds(0.01, 0.99)
        w1 = weight_update_T(np.array([0.9, 0.1]), 1.0, world, bounds)
        w2 = weight_update_T(w1, 1.0, world, bounds)
        np.testing.assert_allclose(w1, w2, atol=1e-15)

    def test_ratio_decreases_with_beta(self):
        world = identical_teachers_world(3)
        bounds = WeightBounds(0.01, 0.99)
        rhos = [estimate_contraction(WeightUpdateConfig(beta=b), world, bounds,
                                     seeded_sampler(2), 50)
                for b in (0.2, 0.5, 0.8)]
        assert rhos[0] > rhos[1] > rhos[2]


class TestFixedPoint:
    def test_two_teacher_world_converges(self):
        world = appendix_world()
        cfg = WeightUpdateConfig(beta=0.3, max_iters=1000, tol=1e-10)
        trace = iterate_to_fixed_point(uniform_weights(2, BOUNDS), cfg, world, BOUNDS)
        assert trace.converged
        assert trace.rho_hat < 1.0
        # long-iteration oracle: brute-force iteration from a far start
        w = np.array([0.9, 0.1])
        for _ in range(10_000):
            w = weight_update_T(w, 0.3, world, BOUNDS)
        np.testing.assert_allclose(trace.w_star, w, atol=1e-9)

    def test_preconverged_start_stops_at_once(self):
        world = appendix_world()
        cfg = WeightUpdateConfig(beta=0.3, max_iters=1000, tol=1e-10)
        trace = iterate_to_fixed_point(uniform_weights(2, BOUNDS), cfg, world, BOUNDS)
        again = iterate_to_fixed_point(trace.w_star, cfg, world, BOUNDS)
        assert again.n_iters == 1
        assert again.distances[0] <= cfg.tol

    def test_distinct_starts_agree(self):
        world = appendix_world()
        cfg = WeightUpdateConfig(beta=0.3, max_iters=1000, tol=1e-10)
        t1 = iterate_to_fixed_point(np.array([0.9, 0.1]), cfg, world, BOUNDS)
        t2 = iterate_to_fixed_point(np.array([0.1, 0.9]), cfg, world, BOUNDS)
        assert np.max(np.abs(t1.w_star - t2.w_star)) <= 1e-6

    def test_iteration_cap_reports_no_convergence(self):
        world = appendix_world()
        cfg = WeightUpdateConfig(beta=0.3, max_iters=2, tol=1e-10)
        trace = iterate_to_fixed_point(np.array([0.9, 0.1]), cfg, world, BOUNDS)
        assert not trace.converged
        assert trace.n_iters == 2

    def test_geometric_envelope(self):
        world = appendix_world()
        cfg = WeightUpdateConfig(beta=0.3, max_iters=1000, tol=1e-10)
        sampler = seeded_sampler(3)
        rho = estimate_contraction(cfg, world, BOUNDS, sampler, 200)
        trace = iterate_to_fixed_point(np.array([0.9, 0.1]), cfg, world, BOUNDS)
        w_star = trace.w_star
        d0 = np.max(np.abs(trace.iterates[0] - w_star))
        for n, it in enumerate(trace.iterates):
            assert np.max(np.abs(it - w_star)) <= rho ** n * d0 * (1 + 1e-6) + 1e-12

    def test_update_preserves_feasibility(self):
        world = convergence_world()
        sampler = seeded_sampler(4)
        for _ in range(50):
            w = sample_feasible_weights(3, BOUNDS, sampler)
            out = weight_update_T(w, 0.45, world, BOUNDS)
            assert abs(out.sum() - 1.0) <= 1e-9
            assert BOUNDS.contains(out)

    def test_infeasible_start_rejected(self):
        world = appendix_world()
        cfg = WeightUpdateConfig(beta=0.3)
        from mskd.core import MskdError
        with pytest.raises(MskdError):
            iterate_to_fixed_point(np.array([0.99, 0.01]), cfg, world, BOUNDS)


class TestPerturbation:
    def test_zero_delta_zero_distance(self):
        world = convergence_world()
        res = perturbation_experiment(adaptive_g(), world, [0.0, 1e-2], ridge=0.01, seed=0)
        assert res.distances[0] == 0.0

    def test_linear_scaling(self):
        world = convergence_world()
        res = perturbation_experiment(adaptive_g(), world, [1e-3, 1e-2, 1e-1],
                                      ridge=0.01, seed=0)
        assert res.r_squared >= 0.95
        assert res.ratio_spread <= 3.0
        assert np.all(np.diff(res.distances) >= -1e-12)

    def test_margin_violation(self):
        world = convergence_world()
        tight = UnifiedWeightOperator(TokenOperator("family_a"), TaskOperator("family_c"),
                                      ContextOperator("family_a"), WeightBounds(0.3, 0.4))
        with pytest.raises(MarginViolated):
            perturbation_experiment(tight, world, [0.2], ridge=0.01, seed=0)


@pytest.fixture(scope="module")
def variance_setup():
    world = convergence_world()
    rng = np.random.default_rng(1)
    theta = rng.normal(size=(len(world.inputs), world.vocab.size))
    params = StudentParams(tuple(x.id for x in world.inputs), theta)
    return world, params


class TestGradientVariance:

    def test_uniform_operator_matches_base(self, variance_setup):
        world, params = variance_setup
        res = gradient_variance_ratio(uniform_unified(WeightBounds(0.01, 0.99)),
                                      world, params, 2000, seed=5)
        assert res.measured == res.base
        assert res.bound == pytest.approx(res.base, rel=1e-12)

    def test_adaptive_families_within_bound(self, variance_setup):
        world, params = variance_setup
        for fam in ("family_a", "family_b", "family_c", "inverse_entropy"):
            g = UnifiedWeightOperator(TokenOperator(fam), TaskOperator("family_c"),
                                      ContextOperator("family_a"), WeightBounds(0.01, 0.99))
            res = gradient_variance_ratio(g, world, params, 2000, seed=5)
            assert res.measured <= res.bound * (1 + 1e-12), fam

    def test_single_cell_world_bound_holds(self):
        world = appendix_world()
        rng = np.random.default_rng(2)
        params = StudentParams((0,), rng.normal(size=(1, 3)))
        g = UnifiedWeightOperator(TokenOperator("family_a"), TaskOperator("family_c"),
                                  ContextOperator("family_a"), WeightBounds(0.01, 0.99))
        res = gradient_variance_ratio(g, world, params, 2000, seed=6)
        assert res.measured <= res.bound * (1 + 1e-12)
