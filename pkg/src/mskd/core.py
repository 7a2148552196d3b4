"""Domain types, validation, and deterministic randomness.

Everything downstream (weight operators, composition, trainers, dynamics,
safety) works on the immutable types defined here: a finite vocabulary with an
optional safety-critical token subset, finite input/task/context sets with
sampling weights, a bank of lookup-table teachers, weight bounds, and a tabular
softmax student. All types validate their invariants at construction time and
freeze their arrays, so instances are safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

SUM_TOL = 1e-9          # tolerance on probability/weight normalization
CONSTRUCTION_TOL = 1e-12  # tolerance on declared weights in specs


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class MskdError(Exception):
    """Base class for all library errors."""


class NegativeMass(MskdError):
    """A probability entry is below -1e-12."""


class NotNormalized(MskdError):
    """A probability vector does not sum to 1 within tolerance."""


class InfeasibleBounds(MskdError):
    """No normalized weight vector can satisfy the per-teacher bounds."""


class ZeroMass(MskdError):
    """A raw weight vector has no positive mass to normalize."""


class MissingScores(MskdError):
    """Required performance or safety scores are absent from the bank."""


class DimensionMismatch(MskdError):
    """Vector lengths disagree."""


class MissingLogits(MskdError):
    """The student has no logit vector for a referenced input."""


class NonFiniteLoss(MskdError):
    """Training produced a non-finite loss value."""


class InsufficientTrace(MskdError):
    """A trace has too few usable evaluation points for a rate fit."""


class MarginViolated(MskdError):
    """A weight perturbation leaves the feasible margin."""


class Infeasible(MskdError):
    """No student can reach the requested safety threshold."""


class DualStall(MskdError):
    """Dual ascent hit its iteration cap before meeting the residual targets."""


class MissingLabel(MskdError):
    """A ground-truth label is absent for a referenced (input, context) pair."""


class NegativeMultiplier(MskdError):
    """A Lagrange multiplier must be nonnegative."""


class NonConformantOperator(MskdError):
    """An operator failed a conformance precondition."""


class ParseError(MskdError):
    """An experiment config file could not be parsed or validated."""


class UnresolvedReference(MskdError):
    """A config references an id that does not exist."""


# ---------------------------------------------------------------------------
# Probability vectors
# ---------------------------------------------------------------------------

def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, order="C")  # copy: never freeze caller arrays
    a.setflags(write=False)
    return a


def validate_distribution(p, vocab_size: int | None = None) -> np.ndarray:
    """Validate a raw vector as a probability distribution over tokens.

    Returns a read-only float64 array. Entries in (-1e-12, 0) are clamped to
    exactly zero; anything more negative raises ``NegativeMass``, and a total
    off by more than 1e-9 raises ``NotNormalized``.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d probability vector, got shape {arr.shape}")
    if vocab_size is not None and arr.shape[0] != vocab_size:
        raise DimensionMismatch(f"expected length {vocab_size}, got {arr.shape[0]}")
    if np.any(arr < -CONSTRUCTION_TOL):
        worst = float(arr.min())
        raise NegativeMass(f"entry {worst} below -{CONSTRUCTION_TOL}")
    arr = np.where(arr < 0.0, 0.0, arr)
    total = float(arr.sum())
    if abs(total - 1.0) > SUM_TOL:
        raise NotNormalized(f"entries sum to {total!r}, not 1 within {SUM_TOL}")
    return _freeze(arr)


def entropy(p) -> float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0.

    The result lies in [0, ln V] for any valid distribution of length V.
    """
    arr = np.asarray(p, dtype=np.float64)
    pos = arr[arr > 0.0]
    return float(-(pos * np.log(pos)).sum())


def normalize_exact(raw: np.ndarray) -> np.ndarray:
    """Normalize a positive vector with one correctly-rounded division per entry.

    The sum is computed in exact rational arithmetic, so algebraically equal
    inputs produce bit-identical outputs (e.g. a product of uniform weight
    vectors normalizes to exactly ``1/K`` per entry, for every K).
    """
    fracs = [Fraction(float(v)) for v in raw]
    total = sum(fracs)
    if total <= 0:
        raise ZeroMass("cannot normalize a vector with no positive mass")
    return np.array([float(f / total) for f in fracs])


# ---------------------------------------------------------------------------
# World specification types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VocabularySpec:
    """A finite token vocabulary with an optional safety-critical subset."""

    size: int
    safety_tokens: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.size < 2:
            raise MskdError(f"vocabulary size must be >= 2, got {self.size}")
        object.__setattr__(self, "safety_tokens", frozenset(self.safety_tokens))
        bad = [i for i in self.safety_tokens if not 0 <= i < self.size]
        if bad:
            raise MskdError(f"safety tokens {bad} outside [0, {self.size})")


@dataclass(frozen=True)
class InputSpec:
    """An input point with a real feature vector (the metric carrier)."""

    id: int
    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", _freeze(np.atleast_1d(self.features)))


@dataclass(frozen=True)
class TaskSpec:
    """A task: a sampling distribution over input ids plus an importance weight."""

    id: int
    input_ids: tuple[int, ...]
    input_weights: np.ndarray
    importance: float

    def __post_init__(self):
        object.__setattr__(self, "input_ids", tuple(self.input_ids))
        w = _freeze(np.asarray(self.input_weights, dtype=np.float64))
        object.__setattr__(self, "input_weights", w)
        if len(self.input_ids) != w.shape[0]:
            raise DimensionMismatch("input id / weight length mismatch")
        if np.any(w < 0) or self.importance < 0:
            raise MskdError("task sampling weights and importance must be nonnegative")
        if abs(float(w.sum()) - 1.0) > CONSTRUCTION_TOL:
            raise NotNormalized(f"task {self.id} sampling weights sum to {float(w.sum())!r}")


@dataclass(frozen=True)
class ContextSpec:
    """A deployment context: features, measure weight, and safety criticality."""

    id: int
    features: np.ndarray
    measure_weight: float
    is_safety_critical: bool = False

    def __post_init__(self):
        object.__setattr__(self, "features", _freeze(np.atleast_1d(self.features)))
        if self.measure_weight < 0:
            raise MskdError("context measure weight must be nonnegative")


@dataclass(frozen=True)
class TeacherBank:
    """K lookup-table teachers with per-task performance and safety scores.

    ``table`` maps (input id, context id) to a (K, V) array whose rows are the
    teachers' distributions at that point. ``perf_scores`` maps task id to a
    length-K array in [0, 1]; ``safety_scores`` is a length-K array in [0, 1]
    that carries the designated ordinal safety ranking of the teachers.
    """

    num_teachers: int
    table: Mapping[tuple[int, int], np.ndarray]
    perf_scores: Mapping[int, np.ndarray]
    safety_scores: np.ndarray

    def __post_init__(self):
        if self.num_teachers < 1:
            raise MskdError("need at least one teacher")
        frozen_table = {}
        for key, dists in self.table.items():
            arr = np.asarray(dists, dtype=np.float64)
            if arr.shape[0] != self.num_teachers:
                raise DimensionMismatch(
                    f"cell {key} holds {arr.shape[0]} distributions, expected {self.num_teachers}")
            frozen_table[key] = _freeze(np.stack([validate_distribution(row) for row in arr]))
        object.__setattr__(self, "table", frozen_table)
        frozen_perf = {}
        for task_id, scores in self.perf_scores.items():
            s = _freeze(np.asarray(scores, dtype=np.float64))
            if s.shape != (self.num_teachers,):
                raise DimensionMismatch(f"perf scores for task {task_id} have shape {s.shape}")
            if np.any((s < 0) | (s > 1)):
                raise MskdError(f"perf scores for task {task_id} outside [0, 1]")
            frozen_perf[task_id] = s
        object.__setattr__(self, "perf_scores", frozen_perf)
        ss = _freeze(np.asarray(self.safety_scores, dtype=np.float64))
        if ss.shape != (self.num_teachers,):
            raise DimensionMismatch("safety scores must have one entry per teacher")
        if np.any((ss < 0) | (ss > 1)):
            raise MskdError("safety scores outside [0, 1]")
        object.__setattr__(self, "safety_scores", ss)

    @property
    def k(self) -> int:
        return self.num_teachers

    def dists(self, input_id: int, context_id: int) -> np.ndarray:
        """The (K, V) stack of teacher distributions at one (input, context) cell."""
        try:
            return self.table[(input_id, context_id)]
        except KeyError:
            raise UnresolvedReference(f"no teacher entry for (input {input_id}, context {context_id})")

    def perf(self, task_id: int) -> np.ndarray:
        try:
            return self.perf_scores[task_id]
        except KeyError:
            raise MissingScores(f"no performance scores for task {task_id}")


@dataclass(frozen=True)
class WeightBounds:
    """Per-teacher weight interval [w_min, w_max] plus a declared Lipschitz bound."""

    w_min: float
    w_max: float
    lipschitz: float = 25.0

    def __post_init__(self):
        if not (0.0 < self.w_min <= self.w_max < math.inf):
            raise InfeasibleBounds(f"need 0 < w_min <= w_max < inf, got [{self.w_min}, {self.w_max}]")
        if self.lipschitz <= 0:
            raise MskdError("declared Lipschitz constant must be positive")

    def check_feasible(self, k: int) -> None:
        """Reject (w_min, w_max, K) combinations no normalized vector can satisfy."""
        if k * self.w_min > 1.0 + CONSTRUCTION_TOL or k * self.w_max < 1.0 - CONSTRUCTION_TOL:
            raise InfeasibleBounds(
                f"bounds [{self.w_min}, {self.w_max}] infeasible for K={k}: "
                f"need K*w_min <= 1 <= K*w_max")

    def contains(self, w: np.ndarray, tol: float = SUM_TOL) -> bool:
        return bool(np.all(w >= self.w_min - tol) and np.all(w <= self.w_max + tol))


@dataclass(frozen=True)
class StudentParams:
    """Tabular softmax student: one logit vector per input id."""

    input_ids: tuple[int, ...]
    logits: np.ndarray          # (n_inputs, V)
    ridge: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "input_ids", tuple(self.input_ids))
        arr = _freeze(np.atleast_2d(np.asarray(self.logits, dtype=np.float64)))
        object.__setattr__(self, "logits", arr)
        if arr.shape[0] != len(self.input_ids):
            raise MissingLogits("one logit row required per input id")
        if self.ridge < 0:
            raise MskdError("ridge strength must be nonnegative")

    def row(self, input_id: int) -> np.ndarray:
        try:
            idx = self.input_ids.index(input_id)
        except ValueError:
            raise MissingLogits(f"no logits for input {input_id}")
        return self.logits[idx]

    def distribution(self, input_id: int) -> np.ndarray:
        return softmax(self.row(input_id))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# World: the full finite experiment universe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class World:
    """A complete finite experiment world.

    Bundles the vocabulary, inputs, tasks, contexts, and teacher bank, and
    precomputes the index maps and joint sampling measure used by the loss,
    trainers, and diagnostics. Task importances must sum to 1, context measure
    weights must sum to 1, and every (input, context) pair reachable under the
    sampling measure must have a teacher table entry.
    """

    vocab: VocabularySpec
    inputs: tuple[InputSpec, ...]
    tasks: tuple[TaskSpec, ...]
    contexts: tuple[ContextSpec, ...]
    bank: TeacherBank

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "contexts", tuple(self.contexts))
        if not self.inputs or not self.tasks or not self.contexts:
            raise MskdError("world needs at least one input, task, and context")
        dims = {x.features.shape[0] for x in self.inputs}
        if len(dims) != 1:
            raise MskdError(f"input feature dimensions differ: {sorted(dims)}")
        lam = np.array([t.importance for t in self.tasks])
        if abs(float(lam.sum()) - 1.0) > CONSTRUCTION_TOL:
            raise NotNormalized(f"task importances sum to {float(lam.sum())!r}")
        mu = np.array([c.measure_weight for c in self.contexts])
        if abs(float(mu.sum()) - 1.0) > CONSTRUCTION_TOL:
            raise NotNormalized(f"context measure weights sum to {float(mu.sum())!r}")
        input_ids = {x.id for x in self.inputs}
        if len(input_ids) != len(self.inputs):
            raise MskdError("duplicate input ids")
        for t in self.tasks:
            missing = [i for i in t.input_ids if i not in input_ids]
            if missing:
                raise UnresolvedReference(f"task {t.id} references unknown inputs {missing}")
        for (xi, ci), dists in self.bank.table.items():
            if dists.shape[1] != self.vocab.size:
                raise DimensionMismatch(
                    f"teacher distributions at ({xi}, {ci}) have length {dists.shape[1]}, "
                    f"vocabulary has {self.vocab.size}")
        for x in self.inputs:
            for c in self.contexts:
                if (x.id, c.id) not in self.bank.table:
                    raise UnresolvedReference(f"teacher table missing cell ({x.id}, {c.id})")
        # cached measure structures (the types above are immutable)
        idx = {x.id: i for i, x in enumerate(self.inputs)}
        px = np.zeros((len(self.tasks), len(self.inputs)))
        for j, t in enumerate(self.tasks):
            for input_id, w in zip(t.input_ids, t.input_weights):
                px[j, idx[input_id]] += w
        object.__setattr__(self, "_input_index", idx)
        object.__setattr__(self, "_lam", _freeze(lam))
        object.__setattr__(self, "_mu", _freeze(mu))
        object.__setattr__(self, "_px", _freeze(px))
        object.__setattr__(self, "_task_local_idx",
                           tuple(tuple(idx[i] for i in t.input_ids) for t in self.tasks))

    # --- index helpers -----------------------------------------------------

    @property
    def input_index(self) -> dict[int, int]:
        return self._input_index

    @property
    def task_importances(self) -> np.ndarray:
        return self._lam

    @property
    def context_weights(self) -> np.ndarray:
        return self._mu

    def input_weight_matrix(self) -> np.ndarray:
        """(n_tasks, n_inputs) matrix of P(input | task) under each task."""
        return self._px

    def joint_measure(self) -> np.ndarray:
        """(n_tasks, n_inputs, n_contexts) joint sampling probabilities."""
        return self._lam[:, None, None] * self._px[:, :, None] * self._mu[None, None, :]

    def input_marginals(self) -> np.ndarray:
        """Aggregate sampling weight of each input (marginal over tasks/contexts)."""
        return self.joint_measure().sum(axis=(0, 2))

    def sample_indices(self, sampler: "Sampler") -> tuple[int, int, int]:
        """Draw (task index, input index, context index) from the declared measure."""
        tj = sampler.choice(self._lam)
        xi = self._task_local_idx[tj][sampler.choice(self.tasks[tj].input_weights)]
        ci = sampler.choice(self._mu)
        return tj, xi, ci


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

class Sampler:
    """Deterministic random source (PCG64 with fixed constants).

    One sampler per worker; never share an instance across concurrent runs.
    Identical seeds give identical draw sequences across processes and
    platforms. Weighted choices go through an explicit cumulative-sum
    inversion of a single uniform draw, so the stream layout is fixed by
    construction rather than by generator internals.
    """

    def __init__(self, seed_seq: np.random.SeedSequence):
        self._seq = seed_seq
        self._gen = np.random.Generator(np.random.PCG64(seed_seq))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def normal(self, scale: float = 1.0, size=None):
        return self._gen.normal(0.0, scale, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, weights: np.ndarray) -> int:
        """Index drawn proportionally to ``weights`` (need not be normalized)."""
        w = np.asarray(weights, dtype=np.float64)
        cum = np.cumsum(w)
        u = self._gen.uniform(0.0, cum[-1])
        return int(np.searchsorted(cum, u, side="right").clip(0, len(w) - 1))

    def spawn(self, n: int) -> list["Sampler"]:
        """Derive n independent child samplers (deterministic given the parent seed)."""
        return [Sampler(s) for s in self._seq.spawn(n)]


def seeded_sampler(seed: int) -> Sampler:
    """A deterministic sampler: identical seed, identical draw sequence."""
    return Sampler(np.random.SeedSequence(seed))


# ---------------------------------------------------------------------------
# CSV plumbing (shared by traces and the experiment runner)
# ---------------------------------------------------------------------------

def format_value(v) -> str:
    """Full-precision, locale-independent cell formatting (17 significant digits)."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
