"""Safety-constrained distillation: measures, dual ascent, KKT, Pareto sweep.

The safety measure is linear in the predictive distribution: on a
safety-critical ground-truth token it reads off the student's probability of
that token, elsewhere it is identically 1. Linearity makes it concave, keeps
its gradient analytic, and makes the ensemble-versus-student comparison an
exact equality at the realizable optimum.

Constrained runs use Lagrangian dual ascent: full-batch minimization in the
logits alternates with a projected multiplier step, safeguarded by step
halving so the feasibility residual never increases after the first update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .composition import UnifiedWeightOperator
from .core import (
    DualStall,
    Infeasible,
    MissingLabel,
    MskdError,
    NegativeMultiplier,
    NonConformantOperator,
    StudentParams,
    VocabularySpec,
    World,
    seeded_sampler,
    softmax,
)
from .distill import (
    CompiledObjective,
    TrainerConfig,
    compile_objective,
    minimize_blockwise,
    solve_compiled,
)
from .operators import check_conformance


@dataclass(frozen=True)
class SafetyConfig:
    """Safety threshold, ground-truth labels, and dual-ascent settings."""

    s_min: float
    labels: Mapping[tuple[int, int], int]   # (input id, context id) -> token
    dual_step: float = 0.5
    max_dual_iters: int = 200

    def __post_init__(self):
        if not 0.0 < self.s_min <= 1.0:
            raise MskdError(f"safety threshold must lie in (0, 1], got {self.s_min}")
        if self.dual_step <= 0:
            raise MskdError("dual step must be positive")
        object.__setattr__(self, "labels", dict(self.labels))

    def label(self, input_id: int, context_id: int) -> int:
        try:
            return self.labels[(input_id, context_id)]
        except KeyError:
            raise MissingLabel(f"no ground-truth label for (input {input_id}, context {context_id})")


def safety_measure(p, y_star: int, vocab: VocabularySpec) -> float:
    """Reliability of a distribution on a ground-truth token.

    Returns p(y*) when y* is safety-critical and 1 otherwise. Linear, hence
    concave, in the distribution, and always within [0, 1].
    """
    if y_star in vocab.safety_tokens:
        return float(np.asarray(p)[y_star])
    return 1.0


# ---------------------------------------------------------------------------
# Expected safety and its derivatives
# ---------------------------------------------------------------------------

def _pair_measure(world: World) -> np.ndarray:
    """(n_inputs, n_contexts) joint measure over (input, context)."""
    return world.input_marginals()[:, None] * world.context_weights[None, :]


def expected_safety(params: StudentParams, world: World, cfg: SafetyConfig) -> float:
    """Exact expectation of the safety measure over the world's (x, c) measure."""
    pm = _pair_measure(world)
    total = 0.0
    for xi, inp in enumerate(world.inputs):
        p = params.distribution(inp.id)
        for ci, ctx in enumerate(world.contexts):
            if pm[xi, ci] == 0.0:
                continue
            total += pm[xi, ci] * safety_measure(p, cfg.label(inp.id, ctx.id), world.vocab)
    return total


def _safety_label_mass(world: World, cfg: SafetyConfig) -> tuple[np.ndarray, float]:
    """Per-input, per-token measure on safety-critical labels, plus the free mass.

    ``mass[x, i]`` collects the (x, c) measure of pairs whose label is the
    safety token i; the returned scalar is the total measure of pairs whose
    label is not safety-critical (those contribute 1 regardless of theta).
    """
    pm = _pair_measure(world)
    mass = np.zeros((len(world.inputs), world.vocab.size))
    free = 0.0
    for xi, inp in enumerate(world.inputs):
        for ci, ctx in enumerate(world.contexts):
            if pm[xi, ci] == 0.0:
                continue
            y = cfg.label(inp.id, ctx.id)
            if y in world.vocab.safety_tokens:
                mass[xi, y] += pm[xi, ci]
            else:
                free += pm[xi, ci]
    return mass, free


def expected_safety_gradient(params: StudentParams, world: World,
                             cfg: SafetyConfig) -> np.ndarray:
    """Analytic gradient of the expected safety with respect to the logits."""
    mass, _ = _safety_label_mass(world, cfg)
    theta = np.array([params.row(x.id) for x in world.inputs])
    grad = np.zeros_like(theta)
    for xi in range(theta.shape[0]):
        p = softmax(theta[xi])
        for y in np.nonzero(mass[xi])[0]:
            grad[xi] += mass[xi, y] * p[y] * (_unit(len(p), y) - p)
    return grad


def _unit(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


def max_achievable_safety(world: World, cfg: SafetyConfig) -> float:
    """Supremum of the expected safety over all students (attained in the limit).

    Per input the best distribution concentrates on the safety token with the
    largest label mass; pairs with non-safety labels contribute 1 regardless.
    """
    mass, free = _safety_label_mass(world, cfg)
    return free + float(mass.max(axis=1).sum())


# ---------------------------------------------------------------------------
# Lagrangian machinery
# ---------------------------------------------------------------------------

def lagrangian_value(params: StudentParams, mu: float, G: UnifiedWeightOperator,
                     world: World, cfg: SafetyConfig) -> float:
    """Lagrangian of the safety-constrained problem: kd_loss - mu * safety."""
    if mu < 0:
        raise NegativeMultiplier(f"multiplier must be nonnegative, got {mu}")
    compiled = compile_objective(G, world, params.ridge)
    theta = np.array([params.row(x.id) for x in world.inputs])
    return compiled.loss(theta) - mu * expected_safety(params, world, cfg)


def _minimize_lagrangian(compiled: CompiledObjective, mu: float, mass: np.ndarray,
                         theta0: np.ndarray, gtol: float) -> np.ndarray:
    """Full-batch minimization of loss - mu * safety via damped block Newton."""
    m_x, qbar, lam = compiled.m_x, compiled.qbar, compiled.ridge
    v = qbar.shape[1]
    eye = np.eye(v)

    def fgh(xi: int, row: np.ndarray):
        p = softmax(row)
        logp = row - row.max()
        logp = logp - np.log(np.exp(logp).sum())
        f = -m_x[xi] * float(qbar[xi] @ logp) + 0.5 * lam * float(row @ row)
        g = m_x[xi] * (p - qbar[xi]) + lam * row
        h = m_x[xi] * (np.diag(p) - np.outer(p, p)) + lam * eye
        for y in np.nonzero(mass[xi])[0]:
            w = mu * mass[xi, y]
            f -= w * p[y]
            ey = eye[y]
            g -= w * p[y] * (ey - p)
            h -= w * p[y] * (np.outer(ey - p, ey - p) - np.diag(p) + np.outer(p, p))
        return f, g, h

    return minimize_blockwise(theta0, fgh, gtol)


@dataclass
class DualAscentResult:
    params: StudentParams
    mu: float
    history: list[dict]
    converged: bool


def dual_ascent_solve(G: UnifiedWeightOperator, world: World, cfg: SafetyConfig,
                      trainer: TrainerConfig, gtol: float = 1e-8) -> DualAscentResult:
    """Safety-constrained solve by Lagrangian dual ascent.

    Feasibility is pre-checked against the analytic safety supremum
    (``Infeasible`` if the threshold is unreachable). Each outer iteration
    solves the Lagrangian to gradient norm ``gtol`` warm-started from the
    previous solution, then takes a projected step on the multiplier; the
    step is halved whenever it would increase the feasibility residual.
    Terminates when the feasibility and complementary-slackness residuals
    both fall below 1e-3, else raises ``DualStall``.
    """
    if trainer.ridge <= 0:
        raise MskdError("dual ascent needs a strictly convex inner solve (positive ridge)")
    if max_achievable_safety(world, cfg) < cfg.s_min - 1e-6:
        raise Infeasible(
            f"maximum achievable safety {max_achievable_safety(world, cfg):.6f} "
            f"is below the threshold {cfg.s_min}")
    compiled = compile_objective(G, world, trainer.ridge)
    mass, _ = _safety_label_mass(world, cfg)
    mu = 0.0
    step = cfg.dual_step
    theta = _minimize_lagrangian(compiled, mu, mass, np.zeros_like(compiled.qbar), gtol)
    history: list[dict] = []
    prev_residual = np.inf
    for it in range(cfg.max_dual_iters):
        params = compiled.params(theta)
        safety = expected_safety(params, world, cfg)
        feas = max(0.0, cfg.s_min - safety)
        slack = abs(mu * (safety - cfg.s_min))
        history.append({"iter": it, "mu": mu, "safety": safety,
                        "kd_loss": compiled.loss(theta), "feasibility": feas,
                        "slackness": slack})
        if feas <= 1e-3 and slack <= 1e-3:
            return DualAscentResult(params, mu, history, True)
        while True:
            mu_new = max(0.0, mu + step * (cfg.s_min - safety))
            theta_new = _minimize_lagrangian(compiled, mu_new, mass, theta, gtol)
            safety_new = expected_safety(compiled.params(theta_new), world, cfg)
            feas_new = max(0.0, cfg.s_min - safety_new)
            if feas_new <= feas + 1e-12 or step < 1e-8:
                break
            step *= 0.5
        mu, theta = mu_new, theta_new
        prev_residual = feas
    raise DualStall(f"dual ascent did not meet residual targets in {cfg.max_dual_iters} iterations")


@dataclass(frozen=True)
class KKTResiduals:
    stationarity: float
    slackness: float
    primal_violation: float
    dual_violation: float

    def all_within(self, tol: float) -> bool:
        return max(self.stationarity, self.slackness,
                   self.primal_violation, self.dual_violation) <= tol


def kkt_residuals(params: StudentParams, mu: float, G: UnifiedWeightOperator,
                  world: World, cfg: SafetyConfig) -> KKTResiduals:
    """First-order optimality residuals for the safety-constrained problem."""
    compiled = compile_objective(G, world, params.ridge)
    theta = np.array([params.row(x.id) for x in world.inputs])
    grad_l = compiled.grad(theta) - mu * expected_safety_gradient(params, world, cfg)
    safety = expected_safety(params, world, cfg)
    return KKTResiduals(
        stationarity=float(np.linalg.norm(grad_l)),
        slackness=abs(mu * (safety - cfg.s_min)),
        primal_violation=max(0.0, cfg.s_min - safety),
        dual_violation=max(0.0, -mu),
    )


def pareto_sweep(G: UnifiedWeightOperator, world: World, cfg: SafetyConfig,
                 mu_grid, ridge: float = 0.01, gtol: float = 1e-8) -> list[tuple[float, float, float]]:
    """Trace the loss-safety frontier by sweeping the multiplier.

    For each mu (nonnegative, ascending) the Lagrangian is minimized
    full-batch, warm-started from the previous point; returns
    (mu, kd_loss, safety) triples. Along the sweep safety is nondecreasing
    and the distillation loss nondecreasing.
    """
    grid = np.asarray(mu_grid, dtype=np.float64)
    if np.any(grid < 0):
        raise NegativeMultiplier("all multipliers in the grid must be nonnegative")
    if np.any(np.diff(grid) < 0):
        raise MskdError("the multiplier grid must be ascending")
    if ridge <= 0:
        raise MskdError("the sweep needs a strictly convex inner solve (positive ridge)")
    compiled = compile_objective(G, world, ridge)
    mass, _ = _safety_label_mass(world, cfg)
    theta = np.zeros_like(compiled.qbar)
    out = []
    for mu in grid:
        theta = _minimize_lagrangian(compiled, float(mu), mass, theta, gtol)
        params = compiled.params(theta)
        out.append((float(mu), compiled.loss(theta), expected_safety(params, world, cfg)))
    return out


# ---------------------------------------------------------------------------
# Ensemble-safety preservation at convergence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JensenResult:
    student_safety: float
    ensemble_safety: float
    passed: bool


def restrict_to_safety_contexts(world: World) -> World:
    """The same world conditioned on its safety-critical contexts."""
    safe = [c for c in world.contexts if c.is_safety_critical]
    if not safe:
        raise MskdError("world has no safety-critical contexts")
    total = sum(c.measure_weight for c in safe)
    renorm = [
        type(c)(c.id, c.features, c.measure_weight / total, c.is_safety_critical)
        for c in safe
    ]
    return World(world.vocab, world.inputs, world.tasks, tuple(renorm), world.bank)


def ensemble_expected_safety(G: UnifiedWeightOperator, world: World,
                             cfg: SafetyConfig) -> float:
    """Expected safety of the weighted ensemble targets themselves."""
    compiled = compile_objective(G, world, 0.0)
    total = 0.0
    joint = compiled.joint
    for tj in range(joint.shape[0]):
        for xi, inp in enumerate(world.inputs):
            for ci, ctx in enumerate(world.contexts):
                w = joint[tj, xi, ci]
                if w == 0.0:
                    continue
                total += w * safety_measure(compiled.targets[tj, xi, ci],
                                            cfg.label(inp.id, ctx.id), world.vocab)
    return total


def jensen_preservation_check(G: UnifiedWeightOperator, world: World, cfg: SafetyConfig,
                              conformance_samples: int = 200) -> JensenResult:
    """Student-versus-ensemble safety comparison at exact convergence.

    Requires the context operator to pass conformance (including safety
    monotonicity) on this world; trains the student to the realizable
    optimum on the safety-critical contexts and compares expected safeties.
    At convergence the student matches the ensemble targets, so with the
    linear measure the two values agree to solver precision; the check
    passes when the student is no worse than the ensemble minus 1e-3.
    """
    sampler = seeded_sampler(20_000 + conformance_samples)
    report = check_conformance(G.context_op, "context", world, G.bounds,
                               sampler, conformance_samples)
    if not report.all_passed:
        raise NonConformantOperator(
            f"context operator fails conformance: {report.failures()}")
    restricted = restrict_to_safety_contexts(world)
    compiled = compile_objective(G, restricted, 0.0)
    theta = solve_compiled(compiled, gtol=1e-10)
    student = compiled.params(theta)
    s_student = expected_safety(student, restricted, cfg)
    s_ensemble = ensemble_expected_safety(G, restricted, cfg)
    return JensenResult(s_student, s_ensemble, s_student >= s_ensemble - 1e-3)
