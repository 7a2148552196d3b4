"""Adaptive distillation objective, trainers, and convergence diagnostics.

The student is tabular (one logit vector per input), so the weighted ensemble
targets are exactly representable and no approximation error contaminates the
convergence experiments. Targets are compiled once per run into dense arrays
(the world is finite and small); stochastic training then samples
(task, input, context) triples with the declared measure, applies
single-sample gradients, and decays the learning rate as eta0 / (1 + t).

The classical uniform-mixture trainer shares the compiled-objective and
update code paths with the adaptive trainer, differing only in how the
target table is built. With all-uniform operators the two tables are
bit-identical, so the trajectories agree exactly at equal seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .composition import UnifiedWeightOperator, renormalized_mixture
from .core import (
    InsufficientTrace,
    MarginViolated,
    MskdError,
    NonFiniteLoss,
    Sampler,
    StudentParams,
    World,
    log_softmax,
    normalize_exact,
    seeded_sampler,
    softmax,
    write_csv,
)


@dataclass(frozen=True)
class TrainerConfig:
    """Stochastic trainer settings.

    ``eta0`` scales the decaying schedule eta_t = eta0 / (1 + t); ``ridge``
    is the global l2 strength; ``init_scale`` is the standard deviation of
    the seeded Gaussian logit initialization (0 starts at the origin).
    """

    eta0: float = 1.0
    steps: int = 1000
    ridge: float = 0.0
    seed: int = 0
    eval_every: int = 100
    init_scale: float = 0.0

    def __post_init__(self):
        if self.eta0 <= 0:
            raise MskdError("eta0 must be positive")
        if self.steps < 0:
            raise MskdError("step count must be nonnegative")
        if self.ridge < 0:
            raise MskdError("ridge strength must be nonnegative")
        if self.eval_every < 1:
            raise MskdError("eval_every must be positive")


@dataclass
class TrainTrace:
    """Per-evaluation training records (steps strictly increasing)."""

    steps: np.ndarray
    loss: np.ndarray
    mean_kl: np.ndarray
    grad_norm: np.ndarray
    lr: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if np.any(np.diff(self.steps) <= 0):
            raise MskdError("trace steps must be strictly increasing")
        for name in ("loss", "mean_kl", "grad_norm", "lr"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def to_csv(self, path) -> None:
        rows = zip(self.steps, self.loss, self.mean_kl, self.grad_norm, self.lr)
        write_csv(path, ["step", "loss", "mean_kl", "grad_norm", "lr"], rows)


# ---------------------------------------------------------------------------
# Compiled objective
# ---------------------------------------------------------------------------

@dataclass
class CompiledObjective:
    """Dense target tables and measure arrays for one (operator, world) pair."""

    world: World
    ridge: float
    joint: np.ndarray          # (J, N, C) sampling probabilities
    targets: np.ndarray        # (J, N, C, V) ensemble targets
    m_x: np.ndarray            # (N,) input marginals
    qbar: np.ndarray           # (N, V) measure-averaged target per input
    target_neg_entropy: float  # E[sum_i q ln q], constant in theta

    def loss(self, theta: np.ndarray) -> float:
        """Expected cross-entropy against the targets plus the ridge term."""
        logp = log_softmax(theta)
        ce = -float(np.sum(self.m_x[:, None] * self.qbar * logp))
        return ce + 0.5 * self.ridge * float(np.sum(theta * theta))

    def grad(self, theta: np.ndarray) -> np.ndarray:
        p = softmax(theta)
        return self.m_x[:, None] * (p - self.qbar) + self.ridge * theta

    def mean_kl(self, theta: np.ndarray) -> float:
        """E over (task, input, context) of KL(target || student)."""
        logp = log_softmax(theta)
        ce = -float(np.sum(self.m_x[:, None] * self.qbar * logp))
        return self.target_neg_entropy + ce

    def params(self, theta: np.ndarray) -> StudentParams:
        return StudentParams(tuple(x.id for x in self.world.inputs), theta, self.ridge)


def _noisy_rows(rows: np.ndarray, delta: float, rng: Sampler, bounds) -> np.ndarray:
    noise = rng.uniform(-delta, delta, size=rows.shape)
    shifted = rows + noise
    if np.any(shifted < bounds.w_min + delta - 1e-15) or \
       np.any(shifted > bounds.w_max - delta + 1e-15):
        raise MarginViolated(
            f"weight perturbation of scale {delta} leaves the margin "
            f"[{bounds.w_min + delta}, {bounds.w_max - delta}]")
    return np.vstack([normalize_exact(r) for r in shifted])


def compile_objective(G: UnifiedWeightOperator, world: World, ridge: float = 0.0,
                      weight_noise: tuple[float, Sampler] | None = None,
                      weight_shift: np.ndarray | None = None) -> CompiledObjective:
    """Evaluate the operator over the finite world once and densify.

    This is the caching layer: component weights are evaluated once per
    (input, context) and task, not per training step. ``weight_noise``
    perturbs every per-token weight row by bounded iid noise and
    renormalizes; ``weight_shift`` adds a fixed direction to every row and
    renormalizes (both used by the robustness experiments).
    """
    j, n, c = len(world.tasks), len(world.inputs), len(world.contexts)
    v = world.vocab.size
    joint = world.joint_measure()
    targets = np.zeros((j, n, c, v))
    for tj, task in enumerate(world.tasks):
        for xi, inp in enumerate(world.inputs):
            for ci, ctx in enumerate(world.contexts):
                if weight_noise is None and weight_shift is None:
                    targets[tj, xi, ci] = G.ensemble_target(inp.id, task.id, ctx.id, world)
                else:
                    rows = _weight_rows(G, inp.id, task.id, ctx.id, world)
                    if weight_shift is not None:
                        rows = np.vstack([normalize_exact(r) for r in rows + weight_shift])
                    if weight_noise is not None:
                        rows = _noisy_rows(rows, weight_noise[0], weight_noise[1], G.bounds)
                    dists = world.bank.dists(inp.id, ctx.id)
                    targets[tj, xi, ci] = renormalized_mixture(rows, dists)
    m_x = joint.sum(axis=(0, 2))
    qbar = np.einsum("jnc,jncv->nv", joint, targets)
    safe = m_x > 0
    qbar[safe] /= m_x[safe, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        qlogq = np.where(targets > 0, targets * np.log(np.where(targets > 0, targets, 1.0)), 0.0)
    neg_ent = float(np.sum(joint[..., None] * qlogq))
    return CompiledObjective(world, ridge, joint, targets, m_x, qbar, neg_ent)


def _weight_rows(G: UnifiedWeightOperator, x: int, t: int, c: int, world: World) -> np.ndarray:
    """(V, K) per-token unified weights at one (input, task, context) point."""
    v = world.vocab.size
    if not G.token_op.token_index_dependent:
        return np.tile(G.unified_weight(x, 0, t, c, world), (v, 1))
    base = G.unified_weight(x, -1, t, c, world)
    rows = np.tile(base, (v, 1))
    for i in world.vocab.safety_tokens:
        rows[i] = G.unified_weight(x, i, t, c, world)
    return rows


def _uniform_compiled(world: World, ridge: float) -> CompiledObjective:
    """Classical target table: plain uniform mixture of the teachers."""
    j, n, c = len(world.tasks), len(world.inputs), len(world.contexts)
    v, k = world.vocab.size, world.bank.k
    joint = world.joint_measure()
    uniform_rows = np.broadcast_to(np.full(k, 1.0 / k), (v, k))
    targets = np.zeros((j, n, c, v))
    for xi, inp in enumerate(world.inputs):
        for ci, ctx in enumerate(world.contexts):
            mix = renormalized_mixture(uniform_rows, world.bank.dists(inp.id, ctx.id))
            targets[:, xi, ci] = mix
    m_x = joint.sum(axis=(0, 2))
    qbar = np.einsum("jnc,jncv->nv", joint, targets)
    safe = m_x > 0
    qbar[safe] /= m_x[safe, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        qlogq = np.where(targets > 0, targets * np.log(np.where(targets > 0, targets, 1.0)), 0.0)
    neg_ent = float(np.sum(joint[..., None] * qlogq))
    return CompiledObjective(world, ridge, joint, targets, m_x, qbar, neg_ent)


# ---------------------------------------------------------------------------
# Loss / gradient (public surface over the compiled form)
# ---------------------------------------------------------------------------

def kd_loss(params: StudentParams, G: UnifiedWeightOperator, world: World) -> float:
    """Exact expected cross-entropy between ensemble targets and the student."""
    compiled = compile_objective(G, world, params.ridge)
    theta = _theta_from_params(params, world)
    return compiled.loss(theta)


def kd_gradient(params: StudentParams, G: UnifiedWeightOperator, world: World) -> np.ndarray:
    """Analytic gradient over the logit table; matches central finite differences."""
    compiled = compile_objective(G, world, params.ridge)
    theta = _theta_from_params(params, world)
    return compiled.grad(theta)


def _theta_from_params(params: StudentParams, world: World) -> np.ndarray:
    rows = [params.row(x.id) for x in world.inputs]
    return np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# Stochastic training
# ---------------------------------------------------------------------------

def _sgd_loop(compiled: CompiledObjective, config: TrainerConfig) -> tuple[np.ndarray, TrainTrace]:
    world = compiled.world
    n, v = len(world.inputs), world.vocab.size
    streams = seeded_sampler(config.seed).spawn(2)
    init_rng, sample_rng = streams
    if config.init_scale > 0:
        theta = config.init_scale * init_rng.normal(size=(n, v))
    else:
        theta = np.zeros((n, v))
        init_rng.normal(size=(n, v))  # keep stream layout identical either way

    records = []

    def record(step: int, lr: float) -> None:
        loss = compiled.loss(theta)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss diverged at step {step}")
        g = compiled.grad(theta)
        records.append((step, loss, compiled.mean_kl(theta),
                        float(np.linalg.norm(g)), lr))

    record(0, config.eta0)
    lam = config.ridge
    for t in range(config.steps):
        eta = config.eta0 / (1.0 + t)
        tj, xi, ci = world.sample_indices(sample_rng)
        p = softmax(theta[xi])
        g = p - compiled.targets[tj, xi, ci]
        if lam > 0:
            theta *= 1.0 - eta * lam
        theta[xi] -= eta * g
        done = t + 1
        if done % config.eval_every == 0 or done == config.steps:
            record(done, eta)
    arr = np.array(records, dtype=np.float64)
    steps = arr[:, 0].astype(np.int64)
    # dedupe the final step when it lands on the eval grid
    _, keep = np.unique(steps, return_index=True)
    trace = TrainTrace(steps[keep], arr[keep, 1], arr[keep, 2], arr[keep, 3], arr[keep, 4])
    return theta, trace


def sgd_train(config: TrainerConfig, G: UnifiedWeightOperator,
              world: World) -> tuple[StudentParams, TrainTrace]:
    """Single-sample stochastic gradient training against the operator's targets."""
    compiled = compile_objective(G, world, config.ridge)
    theta, trace = _sgd_loop(compiled, config)
    return compiled.params(theta), trace


def classic_uniform_train(config: TrainerConfig, world: World) -> tuple[StudentParams, TrainTrace]:
    """Reference trainer for classical uniform-mixture distillation.

    Builds its targets directly as the equal-weight teacher mixture, without
    any weight operators, then runs the same update loop as ``sgd_train``.
    """
    compiled = _uniform_compiled(world, config.ridge)
    theta, trace = _sgd_loop(compiled, config)
    return compiled.params(theta), trace


def noisy_weight_train(config: TrainerConfig, G: UnifiedWeightOperator, world: World,
                       delta: float) -> tuple[StudentParams, TrainTrace]:
    """Training with every weight evaluation perturbed by bounded iid noise.

    Noise of infinity-norm at most ``delta`` is added to each cached weight
    evaluation and the result renormalized; perturbed weights must stay
    inside the margin [w_min + delta, w_max - delta] or ``MarginViolated``
    is raised. ``delta = 0`` reproduces ``sgd_train`` exactly at equal seed
    (the noise stream is separate from the sampling stream).
    """
    if delta < 0:
        raise MskdError("perturbation scale must be nonnegative")
    noise_rng = seeded_sampler(config.seed).spawn(3)[2]
    compiled = compile_objective(G, world, config.ridge,
                                 weight_noise=(delta, noise_rng) if delta > 0 else None)
    theta, trace = _sgd_loop(compiled, config)
    return compiled.params(theta), trace


# ---------------------------------------------------------------------------
# Full-batch solver (damped Newton per logit block)
# ---------------------------------------------------------------------------

def minimize_blockwise(theta0: np.ndarray,
                       block_fgh: Callable[[int, np.ndarray], tuple[float, np.ndarray, np.ndarray]],
                       gtol: float, max_iter: int = 200) -> np.ndarray:
    """Minimize a block-separable objective with damped Newton steps.

    ``block_fgh(x_index, row) -> (value, gradient, Hessian)``. Each logit
    block is independent; iterations use backtracking line search and
    Levenberg damping, so descent holds even where a block Hessian is
    indefinite. Terminates when every block gradient norm is at most
    ``gtol / sqrt(n_blocks)`` (hence the full gradient norm is within gtol).
    """
    theta = np.array(theta0, dtype=np.float64)
    n = theta.shape[0]
    per_block = gtol / np.sqrt(n)
    eye = np.eye(theta.shape[1])
    for xi in range(n):
        row = theta[xi]
        f, g, h = block_fgh(xi, row)
        for _ in range(max_iter):
            if np.linalg.norm(g) <= per_block:
                break
            damp = 0.0
            while True:
                try:
                    d = np.linalg.solve(h + damp * eye, -g)
                except np.linalg.LinAlgError:
                    d = None
                if d is not None and float(g @ d) < 0:
                    break
                damp = max(2.0 * damp, 1e-8)
                if damp > 1e12:
                    d = -g
                    break
            step, slope = 1.0, float(g @ d)
            while step > 1e-14:
                cand = row + step * d
                f2, g2, h2 = block_fgh(xi, cand)
                if f2 <= f + 1e-4 * step * slope:
                    break
                step *= 0.5
            row, f, g, h = row + step * d, f2, g2, h2
        theta[xi] = row
    return theta


def solve_optimum(G: UnifiedWeightOperator, world: World, ridge: float,
                  gtol: float = 1e-10) -> tuple[StudentParams, float]:
    """Deterministic full-batch solve of the distillation objective.

    With no ridge the realizable optimum is analytic (centered log targets);
    otherwise each logit block is solved by damped Newton to the gradient
    tolerance. Returns the optimal student and the optimal loss value.
    """
    compiled = compile_objective(G, world, ridge)
    theta = solve_compiled(compiled, gtol)
    return compiled.params(theta), compiled.loss(theta)


def solve_compiled(compiled: CompiledObjective, gtol: float = 1e-10) -> np.ndarray:
    world = compiled.world
    if compiled.ridge == 0.0:
        if np.any(compiled.qbar <= 0.0):
            raise MskdError(
                "ridge-free optimum needs strictly positive targets (finite logits)")
        logq = np.log(compiled.qbar)
        return logq - logq.mean(axis=1, keepdims=True)

    m_x, qbar, lam = compiled.m_x, compiled.qbar, compiled.ridge

    def fgh(xi: int, row: np.ndarray):
        p = softmax(row)
        logp = log_softmax(row)
        f = -m_x[xi] * float(qbar[xi] @ logp) + 0.5 * lam * float(row @ row)
        g = m_x[xi] * (p - qbar[xi]) + lam * row
        h = m_x[xi] * (np.diag(p) - np.outer(p, p)) + lam * np.eye(len(row))
        return f, g, h

    return minimize_blockwise(np.zeros_like(compiled.qbar), fgh, gtol)


# ---------------------------------------------------------------------------
# Convergence-rate fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    constant: float
    n_points: int


def fit_convergence_rate(trace: TrainTrace, loss_star: float) -> RateFit:
    """Least-squares power-law fit of the loss gap over the trace tail.

    Fits ln(loss_t - loss_star) against ln t on the tail half of the usable
    evaluation points (those with positive step and loss above loss_star).
    The returned constant is exp(intercept), i.e. gap ~ constant * t^slope.
    """
    usable = (trace.steps >= 1) & (trace.loss > loss_star)
    steps = trace.steps[usable]
    gaps = trace.loss[usable] - loss_star
    if steps.shape[0] < 10:
        raise InsufficientTrace(
            f"need at least 10 usable eval points above the floor, got {steps.shape[0]}")
    start = steps.shape[0] // 2
    x = np.log(steps[start:].astype(np.float64))
    y = np.log(gaps[start:])
    slope, intercept = np.polyfit(x, y, 1)
    return RateFit(float(slope), float(np.exp(intercept)), int(steps.shape[0] - start))


def average_traces(traces: list[TrainTrace]) -> TrainTrace:
    """Pointwise mean of traces recorded on an identical step grid."""
    base = traces[0].steps
    for tr in traces[1:]:
        if not np.array_equal(tr.steps, base):
            raise MskdError("traces must share the same evaluation grid")
    return TrainTrace(
        base,
        np.mean([tr.loss for tr in traces], axis=0),
        np.mean([tr.mean_kl for tr in traces], axis=0),
        np.mean([tr.grad_norm for tr in traces], axis=0),
        traces[0].lr,
    )
