"""Experiment configuration, orchestration, persistence, and the CLI.

One JSON document describes one experiment: the world (vocabulary, inputs,
tasks, contexts, teacher table, scores), the operator selection per scale,
weight bounds, trainer settings, and the experiment kind with its
parameters. ``run_experiment`` dispatches to the library modules, collects
result tables and pass/fail assertions into a ``RunRecord``, and
``emit_summary`` writes one CSV per table plus a ``summary.json`` with
stable key order. CSV bodies are deterministic: two runs of the same config
produce byte-identical files.

CLI::

    mskd run <config.json> [--seed N] [--out DIR] [--quiet]
    mskd validate <config.json>
    mskd list-kinds

Exit codes: 0 pass, 1 assertion failure, 2 config error, 3 runtime error.
The environment variable ``AWKD_OUT`` supplies the default output directory.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .composition import UnifiedWeightOperator, uniform_unified, weighted_ensemble
from .core import (
    ContextSpec,
    InputSpec,
    MskdError,
    ParseError,
    TaskSpec,
    TeacherBank,
    VocabularySpec,
    WeightBounds,
    World,
    seeded_sampler,
)
from .distill import (
    TrainerConfig,
    average_traces,
    classic_uniform_train,
    compile_objective,
    fit_convergence_rate,
    sgd_train,
    solve_optimum,
)
from .dynamics import (
    WeightUpdateConfig,
    estimate_contraction,
    gradient_variance_ratio,
    iterate_to_fixed_point,
    perturbation_experiment,
    sample_feasible_weights,
)
from .operators import (
    ContextOperator,
    TaskOperator,
    TokenOperator,
    check_conformance,
    check_pareto_compat,
    inverse_entropy_weights_from_entropies,
    uniform_weights,
)
from .safety import (
    SafetyConfig,
    dual_ascent_solve,
    expected_safety,
    jensen_preservation_check,
    kkt_residuals,
    pareto_sweep,
)
from .worlds import identical_teachers_world

EXPERIMENT_KINDS = (
    "appendix_a", "conformance", "train", "rate", "fixed_point",
    "perturbation", "variance", "safety", "pareto",
)

OUTPUT_ENV_VAR = "AWKD_OUT"


# ---------------------------------------------------------------------------
# Config parsing and validation
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    kind: str
    world: World
    bounds: WeightBounds
    operator: UnifiedWeightOperator
    trainer: TrainerConfig
    params: dict
    seed: int
    out: str | None
    config_hash: str
    raw: dict = field(repr=False, default_factory=dict)


def _canonical_hash(doc: dict) -> str:
    """Deterministic hash over the semantic config content (output path excluded)."""
    semantic = {k: v for k, v in doc.items() if k != "out"}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _build_world(doc: dict, errors: list[str]) -> World | None:
    try:
        wd = doc["world"]
        vocab = VocabularySpec(int(wd["vocab"]["size"]),
                               frozenset(wd["vocab"].get("safety_tokens", [])))
        inputs = tuple(InputSpec(int(i["id"]), np.asarray(i["features"], dtype=float))
                       for i in wd["inputs"])
        tasks = tuple(
            TaskSpec(int(t["id"]),
                     tuple(int(pair[0]) for pair in t["inputs"]),
                     np.asarray([pair[1] for pair in t["inputs"]], dtype=float),
                     float(t["importance"]))
            for t in wd["tasks"])
        contexts = tuple(
            ContextSpec(int(c["id"]), np.asarray(c["features"], dtype=float),
                        float(c["measure_weight"]), bool(c.get("safety_critical", False)))
            for c in wd["contexts"])
        td = wd["teachers"]
        table = {(int(cell["input"]), int(cell["context"])): np.asarray(cell["dists"], dtype=float)
                 for cell in td["table"]}
        bank = TeacherBank(int(td["count"]), table,
                           {int(k): np.asarray(v, dtype=float)
                            for k, v in td["perf_scores"].items()},
                           np.asarray(td["safety_scores"], dtype=float))
        return World(vocab, inputs, tasks, contexts, bank)
    except KeyError as exc:
        errors.append(f"world: missing field {exc}")
    except (MskdError, ValueError, TypeError) as exc:
        errors.append(f"world: {exc}")
    return None


def _build_operator(doc: dict, world: World | None, bounds: WeightBounds | None,
                    errors: list[str]) -> UnifiedWeightOperator | None:
    ops = doc.get("operators", {})
    safety_tokens = world.vocab.safety_tokens if world is not None else frozenset()
    try:
        tok_cfg = ops.get("token", {"family": "uniform"})
        tok = TokenOperator(tok_cfg.get("family", "uniform"),
                            alpha=float(tok_cfg.get("alpha", 1.0)),
                            safety_tokens=safety_tokens,
                            safety_adjustment=bool(tok_cfg.get("safety_adjustment", True)))
        task_cfg = ops.get("task", {"family": "uniform"})
        task = TaskOperator(task_cfg.get("family", "uniform"),
                            tau=float(task_cfg.get("tau", 0.5)))
        ctx_cfg = ops.get("context", {"family": "uniform"})
        ctx = ContextOperator(ctx_cfg.get("family", "uniform"))
        if bounds is None:
            return None
        return UnifiedWeightOperator(tok, task, ctx, bounds)
    except (MskdError, ValueError, TypeError) as exc:
        errors.append(f"operators: {exc}")
        return None


def parse_config_dict(doc: dict) -> ExperimentConfig:
    """Validate a config document, collecting every error before failing."""
    errors: list[str] = []
    kind = doc.get("kind")
    if kind not in EXPERIMENT_KINDS:
        errors.append(f"kind: expected one of {EXPERIMENT_KINDS}, got {kind!r}")
    world = _build_world(doc, errors)
    bounds = None
    try:
        bd = doc.get("bounds", {})
        bounds = WeightBounds(float(bd.get("w_min", 0.01)), float(bd.get("w_max", 0.99)),
                              float(bd.get("lipschitz", 25.0)))
        if world is not None:
            bounds.check_feasible(world.bank.k)
    except (MskdError, ValueError, TypeError) as exc:
        errors.append(f"bounds: {exc}")
        bounds = None
    operator = _build_operator(doc, world, bounds, errors)
    trainer = None
    try:
        tr = doc.get("trainer", {})
        trainer = TrainerConfig(
            eta0=float(tr.get("eta0", 1.0)),
            steps=int(tr.get("steps", 1000)),
            ridge=float(tr.get("ridge", 0.0)),
            seed=int(tr.get("seed", doc.get("seed", 0))),
            eval_every=int(tr.get("eval_every", 100)),
            init_scale=float(tr.get("init_scale", 0.0)),
        )
    except (MskdError, ValueError, TypeError) as exc:
        errors.append(f"trainer: {exc}")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        errors.append("params: must be an object")
        params = {}
    if world is not None and kind in ("safety", "pareto"):
        label_rows = params.get("labels", [])
        known_inputs = {x.id for x in world.inputs}
        known_ctx = {c.id for c in world.contexts}
        for row in label_rows:
            if int(row["input"]) not in known_inputs:
                errors.append(f"params.labels: unknown input {row['input']}")
            if int(row["context"]) not in known_ctx:
                errors.append(f"params.labels: unknown context {row['context']}")
    if errors:
        raise ParseError("invalid config:\n  - " + "\n  - ".join(errors))
    return ExperimentConfig(
        kind=kind, world=world, bounds=bounds, operator=operator, trainer=trainer,
        params=params, seed=int(doc.get("seed", 0)), out=doc.get("out"),
        config_hash=_canonical_hash(doc), raw=doc,
    )


def world_to_dict(world: World) -> dict:
    """Serialize a world into the config schema (inverse of the parser)."""
    return {
        "vocab": {"size": world.vocab.size,
                  "safety_tokens": sorted(world.vocab.safety_tokens)},
        "inputs": [{"id": x.id, "features": x.features.tolist()} for x in world.inputs],
        "tasks": [{"id": t.id,
                   "inputs": [[i, w] for i, w in zip(t.input_ids, t.input_weights.tolist())],
                   "importance": t.importance} for t in world.tasks],
        "contexts": [{"id": c.id, "features": c.features.tolist(),
                      "measure_weight": c.measure_weight,
                      "safety_critical": c.is_safety_critical} for c in world.contexts],
        "teachers": {
            "count": world.bank.k,
            "table": [{"input": xi, "context": ci, "dists": dists.tolist()}
                      for (xi, ci), dists in sorted(world.bank.table.items())],
            "perf_scores": {str(t): s.tolist()
                            for t, s in sorted(world.bank.perf_scores.items())},
            "safety_scores": world.bank.safety_scores.tolist(),
        },
    }


def parse_config(path) -> ExperimentConfig:
    """Load and validate a config file; reports all validation errors at once."""
    p = Path(path)
    if not p.exists():
        raise ParseError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"config file {p} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ParseError("config root must be a JSON object")
    return parse_config_dict(doc)


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    kind: str
    version: str
    started: str
    finished: str = ""
    tables: dict = field(default_factory=dict)       # name -> (header, rows)
    assertions: list = field(default_factory=list)   # dicts

    @property
    def passed(self) -> bool:
        return all(a["pass"] for a in self.assertions)

    def check(self, name: str, measured, expected, tol: float | None = None,
              compare: str = "abs") -> bool:
        """Record one assertion: measured against expected within tolerance.

        ``compare``: 'abs' absolute difference, 'le' measured <= expected,
        'ge' measured >= expected, 'eq' exact equality, 'true' boolean.
        """
        if compare == "abs":
            ok = abs(float(measured) - float(expected)) <= float(tol)
        elif compare == "le":
            ok = float(measured) <= float(expected) + (tol or 0.0)
        elif compare == "ge":
            ok = float(measured) >= float(expected) - (tol or 0.0)
        elif compare == "eq":
            ok = measured == expected
        elif compare == "true":
            ok = bool(measured)
        else:
            raise MskdError(f"unknown comparison {compare!r}")
        self.assertions.append({
            "name": name,
            "expected": expected if isinstance(expected, (int, float, str, bool)) else str(expected),
            "measured": measured if isinstance(measured, (int, float, str, bool)) else str(measured),
            "tol": tol if tol is not None else 0.0,
            "compare": compare,
            "pass": bool(ok),
        })
        return bool(ok)

    def add_table(self, name: str, header, rows) -> None:
        self.tables[name] = (list(header), [list(r) for r in rows])


def _new_record(cfg: ExperimentConfig) -> RunRecord:
    return RunRecord(cfg.config_hash, cfg.kind, __version__,
                     datetime.datetime.now(datetime.timezone.utc).isoformat())


# ---------------------------------------------------------------------------
# Experiment suites
# ---------------------------------------------------------------------------

def _run_appendix_a(cfg: ExperimentConfig, rec: RunRecord) -> None:
    world = cfg.world
    dists = world.bank.dists(world.inputs[0].id, world.contexts[0].id)
    given_h = cfg.params.get("given_entropies", [0.68, 1.52])
    w_given = inverse_entropy_weights_from_entropies(given_h, cfg.bounds)
    rec.check("inverse_entropy_weight_1", float(w_given[0]), 0.69, 0.005)
    rec.check("inverse_entropy_weight_2", float(w_given[1]), 0.31, 0.005)
    q_uniform = weighted_ensemble(uniform_weights(world.bank.k, cfg.bounds), dists)
    for i, expect in enumerate((0.6, 0.25, 0.15)):
        rec.check(f"uniform_ensemble_{i}", float(q_uniform[i]), expect, 1e-12)
    q_adaptive = weighted_ensemble(w_given, dists)
    for i, expect in enumerate((0.676, 0.212, 0.112)):
        rec.check(f"adaptive_ensemble_{i}", float(q_adaptive[i]), expect, 5e-4)
    for i, reported in enumerate((0.68, 0.21, 0.11)):
        rec.check(f"adaptive_vs_reported_{i}", float(q_adaptive[i]), reported, 0.005)
    rec.check("adaptive_gain_on_truth", float(q_adaptive[0] - q_uniform[0]), 0.07, compare="ge")
    from .core import entropy
    recomputed = [entropy(p) for p in dists]
    w_nats = inverse_entropy_weights_from_entropies(recomputed, cfg.bounds)
    rec.add_table("weights", ["scheme", "teacher_1", "teacher_2"], [
        ("given_entropies", w_given[0], w_given[1]),
        ("recomputed_nats", w_nats[0], w_nats[1]),
        ("uniform", 0.5, 0.5),
    ])
    rec.add_table("entropies", ["teacher", "given", "recomputed_nats"],
                  [(i + 1, given_h[i], recomputed[i]) for i in range(len(recomputed))])
    rec.add_table("ensembles", ["scheme"] + [f"token_{i}" for i in range(world.vocab.size)],
                  [("uniform", *q_uniform), ("adaptive", *q_adaptive)])


def _operator_for_scale(cfg: ExperimentConfig, scale: str):
    if scale == "token":
        return cfg.operator.token_op
    if scale == "task":
        return cfg.operator.task_op
    return cfg.operator.context_op


def _run_conformance(cfg: ExperimentConfig, rec: RunRecord) -> None:
    scales = cfg.params.get("scales", ["token", "task", "context"])
    n = int(cfg.params.get("n_samples", 1000))
    sampler = seeded_sampler(cfg.seed)
    rows = []
    for scale in scales:
        op = _operator_for_scale(cfg, scale)
        report = check_conformance(op, scale, cfg.world, cfg.bounds, sampler, n)
        for row in report.summary_rows():
            rows.append((op.family, *row))
        rows.append((op.family, scale, "lipschitz_estimate",
                     report.lipschitz_estimate <= cfg.bounds.lipschitz,
                     report.lipschitz_estimate, report.n_samples))
        rec.check(f"conformance_{scale}_{op.family}", report.all_passed, True, compare="eq")
    if "task" in scales:
        rec.check("pareto_compatibility", check_pareto_compat(), True, compare="eq")
    rec.add_table("conformance", ["family", "scale", "axiom", "passed", "worst_violation", "n"], rows)


def _run_train(cfg: ExperimentConfig, rec: RunRecord) -> None:
    params, trace = sgd_train(cfg.trainer, cfg.operator, cfg.world)
    rec.check("final_loss_finite", bool(np.isfinite(trace.loss[-1])), True, compare="eq")
    if cfg.params.get("compare_classic", False):
        c_params, c_trace = classic_uniform_train(cfg.trainer, cfg.world)
        identical = (np.array_equal(params.logits, c_params.logits)
                     and np.array_equal(trace.loss, c_trace.loss)
                     and np.array_equal(trace.mean_kl, c_trace.mean_kl))
        rec.check("uniform_equals_classic_bitwise", identical, True, compare="eq")
    rec.add_table("trace", ["step", "loss", "mean_kl", "grad_norm", "lr"],
                  zip(trace.steps, trace.loss, trace.mean_kl, trace.grad_norm, trace.lr))


def _run_rate(cfg: ExperimentConfig, rec: RunRecord) -> None:
    n_seeds = int(cfg.params.get("n_seeds", 10))
    kl_tol = float(cfg.params.get("kl_tol", 1e-3))
    slope_lo = float(cfg.params.get("slope_low", -1.3))
    slope_hi = float(cfg.params.get("slope_high", -0.7))
    traces = []
    terminal_kl = []
    for s in range(n_seeds):
        tr_cfg = TrainerConfig(cfg.trainer.eta0, cfg.trainer.steps, cfg.trainer.ridge,
                               cfg.trainer.seed + s, cfg.trainer.eval_every,
                               cfg.trainer.init_scale)
        _, trace = sgd_train(tr_cfg, cfg.operator, cfg.world)
        traces.append(trace)
        terminal_kl.append(float(trace.mean_kl[-1]))
    avg = average_traces(traces)
    _, loss_star = solve_optimum(cfg.operator, cfg.world, cfg.trainer.ridge, gtol=1e-10)
    fit = fit_convergence_rate(avg, loss_star)
    rec.check("terminal_mean_kl", float(np.mean(terminal_kl)), kl_tol, compare="le")
    rec.check("rate_slope_low", fit.slope, slope_lo, compare="ge")
    rec.check("rate_slope_high", fit.slope, slope_hi, compare="le")
    fd_err = _gradient_fd_error(cfg)
    rec.check("gradient_finite_difference", fd_err, 1e-6, compare="le")
    rec.add_table("trace_mean", ["step", "loss", "mean_kl", "grad_norm", "lr"],
                  zip(avg.steps, avg.loss, avg.mean_kl, avg.grad_norm, avg.lr))
    rec.add_table("rate_fit", ["slope", "constant", "loss_star", "n_tail_points"],
                  [(fit.slope, fit.constant, loss_star, fit.n_points)])
    rec.add_table("terminal_kl", ["seed", "mean_kl"],
                  [(cfg.trainer.seed + i, v) for i, v in enumerate(terminal_kl)])


def _gradient_fd_error(cfg: ExperimentConfig, n_probes: int = 3, h: float = 1e-5) -> float:
    compiled = compile_objective(cfg.operator, cfg.world, cfg.trainer.ridge)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    worst = 0.0
    n, v = len(cfg.world.inputs), cfg.world.vocab.size
    for _ in range(n_probes):
        theta = rng.normal(size=(n, v))
        grad = compiled.grad(theta)
        for _ in range(8):
            xi = int(rng.integers(0, n))
            i = int(rng.integers(0, v))
            bump = np.zeros((n, v))
            bump[xi, i] = h
            fd = (compiled.loss(theta + bump) - compiled.loss(theta - bump)) / (2 * h)
            worst = max(worst, abs(fd - grad[xi, i]))
    return worst


def _run_fixed_point(cfg: ExperimentConfig, rec: RunRecord) -> None:
    beta = float(cfg.params.get("beta", 0.3))
    fp_cfg = WeightUpdateConfig(beta, int(cfg.params.get("max_iters", 500)),
                                float(cfg.params.get("tol", 1e-10)))
    sampler = seeded_sampler(cfg.seed)
    k = cfg.world.bank.k
    rho = estimate_contraction(fp_cfg, cfg.world, cfg.bounds, sampler,
                               int(cfg.params.get("n_pairs", 100)))
    rec.check("contraction_below_one", rho, 1.0 - 1e-9, compare="le")
    trace = iterate_to_fixed_point(uniform_weights(k, cfg.bounds), fp_cfg, cfg.world, cfg.bounds)
    rec.check("iteration_converged", trace.converged, True, compare="eq")
    w_star = trace.w_star
    envelope_ok = True
    d0 = float(np.max(np.abs(trace.iterates[0] - w_star)))
    for nstep in range(len(trace.iterates)):
        lhs = float(np.max(np.abs(trace.iterates[nstep] - w_star)))
        if lhs > (rho ** nstep) * d0 * (1.0 + 1e-6) + 1e-12:
            envelope_ok = False
    rec.check("geometric_envelope", envelope_ok, True, compare="eq")
    spread = 0.0
    for _ in range(int(cfg.params.get("n_starts", 10))):
        w0 = sample_feasible_weights(k, cfg.bounds, sampler)
        tr = iterate_to_fixed_point(w0, fp_cfg, cfg.world, cfg.bounds)
        spread = max(spread, float(np.max(np.abs(tr.w_star - w_star))))
    rec.check("fixed_point_unique", spread, 1e-6, compare="le")
    control = identical_teachers_world(k)
    control_bounds = WeightBounds(0.01, 0.99, cfg.bounds.lipschitz)
    rho_control = estimate_contraction(fp_cfg, control, control_bounds, sampler, 50)
    rec.check("constant_target_ratio", rho_control, 1.0 - beta, 1e-9)
    rec.add_table("fixed_point", ["iteration", "distance"],
                  list(enumerate(trace.distances, start=1)))
    rec.add_table("results", ["experiment", "parameter", "value"], [
        ("fixed_point", "rho_hat", rho),
        ("fixed_point", "rho_control", rho_control),
        ("fixed_point", "beta", beta),
        ("fixed_point", "start_spread", spread),
        *[("fixed_point", f"w_star_{i}", w_star[i]) for i in range(k)],
    ])


def _run_perturbation(cfg: ExperimentConfig, rec: RunRecord) -> None:
    deltas = cfg.params.get("deltas", [1e-3, 1e-2, 1e-1])
    ridge = float(cfg.params.get("ridge", cfg.trainer.ridge or 0.01))
    result = perturbation_experiment(cfg.operator, cfg.world, deltas,
                                     ridge=ridge, seed=cfg.seed)
    rec.check("linear_fit_r_squared", result.r_squared, 0.95, compare="ge")
    rec.check("distance_ratio_spread", result.ratio_spread, 3.0, compare="le")
    rec.check("distances_monotone",
              bool(np.all(np.diff(result.distances) >= -1e-12)), True, compare="eq")
    rec.add_table("perturbation", ["delta", "distance"], result.rows())
    rec.add_table("results", ["experiment", "parameter", "value"], [
        ("perturbation", "slope_C", result.slope),
        ("perturbation", "r_squared", result.r_squared),
        ("perturbation", "ratio_spread", result.ratio_spread),
    ])


def _run_variance(cfg: ExperimentConfig, rec: RunRecord) -> None:
    n = int(cfg.params.get("n_samples", 10_000))
    init_scale = float(cfg.params.get("init_scale", 1.0))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    nloc, v = len(cfg.world.inputs), cfg.world.vocab.size
    theta = init_scale * rng.normal(size=(nloc, v))
    from .core import StudentParams
    params = StudentParams(tuple(x.id for x in cfg.world.inputs), theta)
    rows = []
    res = gradient_variance_ratio(cfg.operator, cfg.world, params, n, seed=cfg.seed)
    rec.check("variance_within_bound", res.measured, res.bound, compare="le")
    rows.append(("configured", res.measured, res.base, res.bound,
                 res.w_min_observed, res.w_max_observed))
    uni = uniform_unified(cfg.bounds, cfg.world.vocab.safety_tokens)
    res_u = gradient_variance_ratio(uni, cfg.world, params, n, seed=cfg.seed)
    rel = abs(res_u.measured - res_u.base) / res_u.base if res_u.base > 0 else 0.0
    rec.check("uniform_variance_matches_base", rel, 0.02, compare="le")
    rows.append(("uniform", res_u.measured, res_u.base, res_u.bound,
                 res_u.w_min_observed, res_u.w_max_observed))
    long_rows = []
    for name, measured, base, bound, wlo, whi in rows:
        long_rows += [("variance", f"{name}_measured", measured),
                      ("variance", f"{name}_base", base),
                      ("variance", f"{name}_bound", bound),
                      ("variance", f"{name}_w_min", wlo),
                      ("variance", f"{name}_w_max", whi)]
    rec.add_table("results", ["experiment", "parameter", "value"], long_rows)


def _safety_config(cfg: ExperimentConfig) -> SafetyConfig:
    labels = {(int(r["input"]), int(r["context"])): int(r["token"])
              for r in cfg.params.get("labels", [])}
    return SafetyConfig(float(cfg.params.get("s_min", 0.5)), labels,
                        float(cfg.params.get("dual_step", 0.5)),
                        int(cfg.params.get("max_dual_iters", 200)))


def _run_safety(cfg: ExperimentConfig, rec: RunRecord) -> None:
    scfg = _safety_config(cfg)
    result = dual_ascent_solve(cfg.operator, cfg.world, scfg, cfg.trainer)
    res = kkt_residuals(result.params, result.mu, cfg.operator, cfg.world, scfg)
    rec.check("kkt_stationarity", res.stationarity, 1e-3, compare="le")
    rec.check("kkt_slackness", res.slackness, 1e-3, compare="le")
    rec.check("kkt_primal", res.primal_violation, 1e-3, compare="le")
    rec.check("kkt_dual", res.dual_violation, 1e-3, compare="le")
    inactive = cfg.params.get("s_min_inactive")
    if inactive is not None:
        scfg2 = SafetyConfig(float(inactive), scfg.labels, scfg.dual_step, scfg.max_dual_iters)
        r2 = dual_ascent_solve(cfg.operator, cfg.world, scfg2, cfg.trainer)
        rec.check("inactive_multiplier_zero", r2.mu, 0.0, 1e-12)
    jns = jensen_preservation_check(cfg.operator, cfg.world, scfg)
    rec.check("student_safety_at_least_ensemble", jns.passed, True, compare="eq")
    rec.add_table("dual_history",
                  ["iter", "mu", "safety", "kd_loss", "feasibility", "slackness"],
                  [(h["iter"], h["mu"], h["safety"], h["kd_loss"],
                    h["feasibility"], h["slackness"]) for h in result.history])
    rec.add_table("kkt", ["stationarity", "slackness", "primal", "dual", "mu", "safety"],
                  [(res.stationarity, res.slackness, res.primal_violation,
                    res.dual_violation, result.mu,
                    expected_safety(result.params, cfg.world, scfg))])
    rec.add_table("jensen", ["student_safety", "ensemble_safety", "passed"],
                  [(jns.student_safety, jns.ensemble_safety, jns.passed)])


def _run_pareto(cfg: ExperimentConfig, rec: RunRecord) -> None:
    scfg = _safety_config(cfg)
    grid = cfg.params.get("mu_grid")
    if grid is None:
        grid = list(np.linspace(0.0, float(cfg.params.get("mu_max", 2.0)),
                                int(cfg.params.get("n_mu", 20))))
    ridge = float(cfg.params.get("ridge", cfg.trainer.ridge or 0.01))
    points = pareto_sweep(cfg.operator, cfg.world, scfg, grid, ridge=ridge)
    safeties = np.array([p[2] for p in points])
    losses = np.array([p[1] for p in points])
    rec.check("safety_nondecreasing", bool(np.all(np.diff(safeties) >= -1e-9)),
              True, compare="eq")
    rec.check("loss_nondecreasing", bool(np.all(np.diff(losses) >= -1e-9)),
              True, compare="eq")
    rec.add_table("pareto", ["mu", "kd_loss", "safety"], points)


_SUITES = {
    "appendix_a": _run_appendix_a,
    "conformance": _run_conformance,
    "train": _run_train,
    "rate": _run_rate,
    "fixed_point": _run_fixed_point,
    "perturbation": _run_perturbation,
    "variance": _run_variance,
    "safety": _run_safety,
    "pareto": _run_pareto,
}


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Execute the configured suite and collect tables plus assertions."""
    rec = _new_record(cfg)
    try:
        _SUITES[cfg.kind](cfg, rec)
    except MskdError as exc:
        raise type(exc)(f"[kind={cfg.kind} config={cfg.config_hash}] {exc}") from exc
    rec.finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return rec


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def emit_summary(record: RunRecord, out_dir, quiet: bool = False) -> Path:
    """Write per-table CSVs and a machine-readable summary; print verdicts.

    The summary JSON has stable key order ({config_hash, kind, assertions})
    and no timestamps, so reruns of the same config are byte-identical.
    """
    if not record.assertions and not record.tables:
        raise MskdError("refusing to emit an empty summary (no assertions, no tables)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .core import write_csv
    for name, (header, rows) in sorted(record.tables.items()):
        write_csv(out / f"{name}.csv", header, rows)
    summary = {
        "config_hash": record.config_hash,
        "kind": record.kind,
        "assertions": [
            {"name": a["name"], "expected": a["expected"], "measured": a["measured"],
             "tol": a["tol"], "pass": a["pass"]}
            for a in record.assertions
        ],
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if not quiet:
        for a in record.assertions:
            verdict = "PASS" if a["pass"] else "FAIL"
            print(f"[{verdict}] {a['name']}: measured={a['measured']} "
                  f"expected={a['expected']} ({a['compare']}, tol={a['tol']})")
        n_pass = sum(1 for a in record.assertions if a["pass"])
        print(f"{record.kind}: {n_pass}/{len(record.assertions)} assertions passed "
              f"-> {out}")
    return out


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _resolve_out(cfg: ExperimentConfig, cli_out: str | None) -> str:
    if cli_out:
        return cli_out
    if cfg.out:
        return cfg.out
    env = os.environ.get(OUTPUT_ENV_VAR)
    if env:
        return str(Path(env) / f"{cfg.kind}-{cfg.config_hash}")
    return str(Path("out") / f"{cfg.kind}-{cfg.config_hash}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mskd", description="Adaptive multi-teacher distillation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--quiet", action="store_true")
    p_val = sub.add_parser("validate", help="validate a config without running it")
    p_val.add_argument("config")
    sub.add_parser("list-kinds", help="list available experiment kinds")
    args = parser.parse_args(argv)

    if args.command == "list-kinds":
        for kind in EXPERIMENT_KINDS:
            print(kind)
        return 0

    try:
        cfg = parse_config(args.config)
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"valid: kind={cfg.kind} hash={cfg.config_hash}")
        return 0

    if args.seed is not None:
        doc = dict(cfg.raw)
        doc["seed"] = args.seed
        doc.setdefault("trainer", {})
        doc["trainer"] = dict(doc["trainer"])
        doc["trainer"]["seed"] = args.seed
        try:
            cfg = parse_config_dict(doc)
        except ParseError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2

    try:
        record = run_experiment(cfg)
        emit_summary(record, _resolve_out(cfg, args.out), quiet=args.quiet)
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MskdError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0 if record.passed else 1


if __name__ == "__main__":
    sys.exit(main())
