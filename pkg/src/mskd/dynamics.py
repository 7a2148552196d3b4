"""Weight-space update dynamics: fixed points, contraction, robustness.

The update operator blends the current teacher weights toward a
performance-feedback target: each teacher is scored by how well its
predictions agree with the current weighted consensus (negative
cross-entropy against the ensemble target, averaged over the world), the
scores pass through a softmax, and the weights move a fraction ``beta`` of
the way toward that target before re-projection onto the bounded simplex.
Identical teachers make the target constant, so the update is affine with
ratio (1 - beta); that exact case anchors the contraction estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .composition import UnifiedWeightOperator
from .core import (
    MarginViolated,
    MskdError,
    Sampler,
    StudentParams,
    World,
    WeightBounds,
    softmax,
)
from .distill import CompiledObjective, _uniform_compiled, _weight_rows, compile_objective, solve_compiled
from .operators import clip_normalize


@dataclass(frozen=True)
class WeightUpdateConfig:
    """Step size and termination settings for the weight-update iteration."""

    beta: float = 0.3
    max_iters: int = 500
    tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise MskdError(f"beta must lie in (0, 1], got {self.beta}")
        if self.max_iters < 1 or self.tol <= 0:
            raise MskdError("max_iters must be positive and tol > 0")


@dataclass
class FixedPointTrace:
    """Iterates, successive distances, and the empirical contraction ratio."""

    iterates: np.ndarray        # (n+1, K) including the start
    distances: np.ndarray       # (n,) infinity-norm steps
    rho_hat: float              # max successive-distance ratio
    converged: bool

    @property
    def w_star(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def n_iters(self) -> int:
        return len(self.distances)


def _ensemble_feedback(w: np.ndarray, world: World) -> np.ndarray:
    """Per-teacher agreement score with the w-weighted consensus.

    feedback_k = E_{x,c}[ sum_i p_k(i) * ln q_w(i) ], i.e. the negative
    cross-entropy of teacher k against the current ensemble target. A
    Lipschitz function of w as long as the teacher tables are strictly
    positive.
    """
    m_x = world.input_marginals()
    mu = world.context_weights
    feedback = np.zeros(world.bank.k)
    for xi, inp in enumerate(world.inputs):
        if m_x[xi] == 0.0:
            continue
        for ci, ctx in enumerate(world.contexts):
            weight = m_x[xi] * mu[ci]
            if weight == 0.0:
                continue
            dists = world.bank.dists(inp.id, ctx.id)
            q = w @ dists
            feedback += weight * (dists @ np.log(q))
    return feedback


def weight_update_T(w: np.ndarray, beta: float, world: World,
                    bounds: WeightBounds) -> np.ndarray:
    """One step of the weight-update operator.

    Moves ``w`` a fraction ``beta`` toward the softmax of the feedback
    scores, then re-projects onto the bounded simplex. Deterministic.
    """
    if not 0.0 < beta <= 1.0:
        raise MskdError(f"beta must lie in (0, 1], got {beta}")
    target = softmax(_ensemble_feedback(np.asarray(w, dtype=np.float64), world))
    return clip_normalize((1.0 - beta) * np.asarray(w) + beta * target, bounds)


def iterate_to_fixed_point(w0, config: WeightUpdateConfig, world: World,
                           bounds: WeightBounds) -> FixedPointTrace:
    """Iterate the update operator until successive iterates stop moving.

    Hitting ``max_iters`` with the last step above tolerance is reported via
    ``converged=False`` (with the observed ratio), not raised.
    """
    w = np.asarray(w0, dtype=np.float64)
    bounds.check_feasible(w.shape[0])
    if abs(float(w.sum()) - 1.0) > 1e-9 or not bounds.contains(w):
        raise MskdError("starting weights must be normalized and within bounds")
    iterates = [w]
    distances: list[float] = []
    converged = False
    for _ in range(config.max_iters):
        w_next = weight_update_T(w, config.beta, world, bounds)
        d = float(np.max(np.abs(w_next - w)))
        iterates.append(w_next)
        distances.append(d)
        w = w_next
        if d <= config.tol:
            converged = True
            break
    dist_arr = np.array(distances)
    ratios = [dist_arr[i + 1] / dist_arr[i]
              for i in range(len(dist_arr) - 1) if dist_arr[i] > 1e-300]
    rho_hat = float(max(ratios)) if ratios else 0.0
    return FixedPointTrace(np.array(iterates), dist_arr, rho_hat, converged)


def sample_feasible_weights(k: int, bounds: WeightBounds, sampler: Sampler) -> np.ndarray:
    return clip_normalize(sampler.uniform(bounds.w_min, bounds.w_max, size=k), bounds)


def estimate_contraction(config: WeightUpdateConfig, world: World, bounds: WeightBounds,
                         sampler: Sampler, n_pairs: int = 100) -> float:
    """Empirical contraction ratio over sampled feasible weight pairs.

    rho_hat = max ||T(w) - T(w')||_inf / ||w - w'||_inf.
    """
    if n_pairs < 1:
        raise MskdError("need at least one pair")
    k = world.bank.k
    rho = 0.0
    for _ in range(n_pairs):
        w = sample_feasible_weights(k, bounds, sampler)
        w2 = sample_feasible_weights(k, bounds, sampler)
        denom = float(np.max(np.abs(w - w2)))
        if denom < 1e-12:
            continue
        num = float(np.max(np.abs(
            weight_update_T(w, config.beta, world, bounds)
            - weight_update_T(w2, config.beta, world, bounds))))
        rho = max(rho, num / denom)
    return rho


# ---------------------------------------------------------------------------
# Perturbation robustness of the trained student
# ---------------------------------------------------------------------------

@dataclass
class PerturbationResult:
    deltas: np.ndarray
    distances: np.ndarray
    slope: float           # fitted C in distance = C * delta (through the origin)
    r_squared: float
    ratio_spread: float    # max / min of distance / delta

    def rows(self):
        return list(zip(self.deltas, self.distances))


def perturbation_experiment(G: UnifiedWeightOperator, world: World, delta_list,
                            ridge: float = 0.01, seed: int = 0,
                            gtol: float = 1e-8) -> PerturbationResult:
    """Solution sensitivity to a fixed-direction weight perturbation.

    One zero-sum direction of unit infinity-norm is drawn per experiment and
    scaled by each delta; shifting the weights along a zero-sum direction
    keeps the renormalization exact, isolating the delta scaling. Both the
    clean and perturbed objectives are solved full-batch to ``gtol`` and the
    parameter distance recorded, then fitted as distance = C * delta.
    """
    deltas = np.asarray(delta_list, dtype=np.float64)
    if np.any(deltas < 0):
        raise MskdError("perturbation scales must be nonnegative")
    if ridge <= 0:
        raise MskdError("the perturbation experiment needs a strongly convex solve")
    k = world.bank.k
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    direction = rng.normal(size=k)
    direction -= direction.mean()
    direction /= np.max(np.abs(direction))

    base = compile_objective(G, world, ridge)
    _check_shift_margin(G, world, deltas.max(initial=0.0) * direction)
    theta0 = solve_compiled(base, gtol)
    distances = []
    for d in deltas:
        if d == 0.0:
            distances.append(0.0)
            continue
        shifted = compile_objective(G, world, ridge, weight_shift=d * direction)
        theta_d = solve_compiled(shifted, gtol)
        distances.append(float(np.linalg.norm(theta_d - theta0)))
    dist = np.array(distances)
    pos = deltas > 0
    slope = float(np.sum(dist[pos] * deltas[pos]) / np.sum(deltas[pos] ** 2))
    ss_res = float(np.sum((dist[pos] - slope * deltas[pos]) ** 2))
    ss_tot = float(np.sum(dist[pos] ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    ratios = dist[pos] / deltas[pos]
    spread = float(ratios.max() / ratios.min()) if ratios.min() > 0 else np.inf
    return PerturbationResult(deltas, dist, slope, r2, spread)


def _check_shift_margin(G: UnifiedWeightOperator, world: World, shift: np.ndarray) -> None:
    bounds = G.bounds
    for task in world.tasks:
        for inp in world.inputs:
            for ctx in world.contexts:
                rows = _weight_rows(G, inp.id, task.id, ctx.id, world) + shift
                if np.any(rows < bounds.w_min) or np.any(rows > bounds.w_max):
                    raise MarginViolated(
                        f"shift of norm {np.max(np.abs(shift))} leaves "
                        f"[{bounds.w_min}, {bounds.w_max}] at input {inp.id}")


# ---------------------------------------------------------------------------
# Gradient-variance measurement
# ---------------------------------------------------------------------------

@dataclass
class VarianceResult:
    measured: float
    base: float
    bound: float
    w_min_observed: float
    w_max_observed: float

    @property
    def within_bound(self) -> bool:
        return self.measured <= self.bound * (1.0 + 1e-12)


def _single_sample_variance(compiled: CompiledObjective, theta: np.ndarray,
                            n_samples: int, sampler: Sampler) -> float:
    """Trace of the covariance of the single-sample stochastic gradient.

    The deterministic ridge component is identical across samples and drops
    out of the covariance, so it is omitted.
    """
    world = compiled.world
    n, v = theta.shape
    probs = softmax(theta)
    mean_g = np.zeros((n, v))
    sq_sum = 0.0
    blocks = []
    for _ in range(n_samples):
        tj, xi, ci = world.sample_indices(sampler)
        g = probs[xi] - compiled.targets[tj, xi, ci]
        mean_g[xi] += g
        sq_sum += float(g @ g)
        blocks.append((xi, g))
    mean_g /= n_samples
    return sq_sum / n_samples - float(np.sum(mean_g * mean_g))


def gradient_variance_ratio(G: UnifiedWeightOperator, world: World, params: StudentParams,
                            n_samples: int = 10_000, seed: int = 0) -> VarianceResult:
    """Measured stochastic-gradient variance against the bound ratio.

    The baseline variance is measured under the classical uniform mixture
    with the same sampling stream; the measured variance under ``G`` must
    stay below (w_max_obs / w_min_obs)^2 times the baseline, where the
    extremes are observed over the operator's unified weights on this world.
    """
    if n_samples < 100:
        raise MskdError("need at least 100 samples")
    theta = np.array([params.row(x.id) for x in world.inputs])
    adaptive = compile_objective(G, world, 0.0)
    baseline = _uniform_compiled(world, 0.0)
    measured = _single_sample_variance(adaptive, theta, n_samples,
                                       Sampler(np.random.SeedSequence(seed)))
    base = _single_sample_variance(baseline, theta, n_samples,
                                   Sampler(np.random.SeedSequence(seed)))
    w_lo, w_hi = np.inf, 0.0
    for task in world.tasks:
        for inp in world.inputs:
            for ctx in world.contexts:
                rows = _weight_rows(G, inp.id, task.id, ctx.id, world)
                w_lo = min(w_lo, float(rows.min()))
                w_hi = max(w_hi, float(rows.max()))
    bound = (w_hi / w_lo) ** 2 * base
    return VarianceResult(measured, base, bound, w_lo, w_hi)
