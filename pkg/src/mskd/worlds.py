"""Bundled toy worlds used by the experiment suites and tests.

Each builder returns a fully validated :class:`~mskd.core.World`. The worlds
are small enough for exact expectations yet structured enough to exercise
every axiom: tiered teacher banks where confidence aligns (or anti-aligns)
with the designated safety ordering, a phase-shifted teacher ensemble whose
uniform mixture is exactly uniform (keeping the regularized optimum within
reach of tight convergence tolerances), and a safety world with conflicting
labels so that thresholds near 1 are genuinely infeasible.
"""

from __future__ import annotations

import numpy as np

from .core import (
    ContextSpec,
    InputSpec,
    TaskSpec,
    TeacherBank,
    VocabularySpec,
    World,
    softmax,
)

APPENDIX_TEACHER_1 = (0.8, 0.15, 0.05)
APPENDIX_TEACHER_2 = (0.4, 0.35, 0.25)


def appendix_world() -> World:
    """Two teachers over a three-token vocabulary, one cell, no safety set."""
    vocab = VocabularySpec(3)
    inputs = (InputSpec(0, np.array([0.0])),)
    tasks = (TaskSpec(0, (0,), np.array([1.0]), 1.0),)
    contexts = (ContextSpec(0, np.array([0.0]), 1.0),)
    table = {(0, 0): np.array([APPENDIX_TEACHER_1, APPENDIX_TEACHER_2])}
    bank = TeacherBank(2, table, {0: np.array([0.8, 0.5])}, np.array([0.9, 0.3]))
    return World(vocab, inputs, tasks, contexts, bank)


def appendix_safety_world() -> World:
    """The two-teacher world with a safety-critical context and token-0 labels."""
    vocab = VocabularySpec(3, frozenset({0}))
    inputs = (InputSpec(0, np.array([0.0])),)
    tasks = (TaskSpec(0, (0,), np.array([1.0]), 1.0),)
    contexts = (
        ContextSpec(0, np.array([0.0]), 0.5, is_safety_critical=True),
        ContextSpec(1, np.array([1.0]), 0.5),
    )
    dists = np.array([APPENDIX_TEACHER_1, APPENDIX_TEACHER_2])
    table = {(0, 0): dists, (0, 1): dists}
    bank = TeacherBank(2, table, {0: np.array([0.8, 0.5])}, np.array([0.9, 0.3]))
    return World(vocab, inputs, tasks, contexts, bank)


def appendix_labels() -> dict[tuple[int, int], int]:
    """Ground truth for the two-teacher worlds: token a everywhere."""
    return {(0, 0): 0, (0, 1): 0}


def convergence_world() -> World:
    """K=3, V=10, two tasks, two contexts, eight inputs.

    Teacher k at input x places a cosine bump of amplitude A_c at phase
    2*pi*k/3 around token x. The three phases cancel exactly, so the uniform
    mixture is exactly uniform and the ridge bias at the regularized optimum
    stays far below the convergence tolerances, while per-teacher entropies
    still differ enough for adaptive weights to deviate from uniform.
    """
    v, k = 10, 3
    vocab = VocabularySpec(v)
    inputs = tuple(InputSpec(x, np.array([np.cos(2 * np.pi * x / 8), np.sin(2 * np.pi * x / 8)]))
                   for x in range(8))
    tasks = (
        TaskSpec(0, tuple(range(8)), np.array([0.2, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]), 0.6),
        TaskSpec(1, tuple(range(8)), np.array([0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.2, 0.2]), 0.4),
    )
    amplitudes = (0.25, 0.35)
    contexts = (
        ContextSpec(0, np.array([0.0]), 0.5),
        ContextSpec(1, np.array([1.0]), 0.5),
    )
    table = {}
    tokens = np.arange(v)
    for x in range(8):
        for c, amp in enumerate(amplitudes):
            dists = []
            for teacher in range(k):
                phase = 2 * np.pi * (tokens - x) / v + 2 * np.pi * teacher / k
                p = (1.0 + amp * np.cos(phase)) / v
                dists.append(p / p.sum())
            table[(x, c)] = np.array(dists)
    perf = {0: np.array([0.75, 0.70, 0.65]), 1: np.array([0.66, 0.72, 0.69])}
    bank = TeacherBank(k, table, perf, np.array([0.7, 0.5, 0.3]))
    return World(vocab, inputs, tasks, contexts, bank)


def conformance_world(kind: str = "sharp_safe", seed: int = 7) -> World:
    """Tiered three-teacher bank for axiom-conformance sampling.

    Teachers share base logits per cell and differ only by temperature, so
    their entropy ordering is uniform across the world. ``sharp_safe`` ranks
    the sharpest teacher safest (matching entropy-decay and hybrid weights);
    ``flat_safe`` ranks the flattest teacher safest (matching
    inverse-variance weights). Both are realistic banks; they differ only in
    which reliability story the designated safety ordering tells.
    """
    if kind not in ("sharp_safe", "flat_safe"):
        raise ValueError(f"unknown conformance world kind {kind!r}")
    v, k = 6, 3
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    vocab = VocabularySpec(v, frozenset({0, 1}))
    inputs = tuple(InputSpec(x, rng.normal(size=2)) for x in range(6))
    tasks = (
        TaskSpec(0, (0, 1, 2, 3), np.array([0.4, 0.3, 0.2, 0.1]), 0.5),
        TaskSpec(1, (2, 3, 4, 5), np.array([0.25, 0.25, 0.25, 0.25]), 0.5),
    )
    contexts = (
        ContextSpec(0, rng.normal(size=2), 0.4),
        ContextSpec(1, rng.normal(size=2), 0.3),
        ContextSpec(2, rng.normal(size=2), 0.3, is_safety_critical=True),
    )
    temperatures = (0.6, 0.9, 1.4)
    table = {}
    for x in range(6):
        for c in range(3):
            base = rng.normal(size=v)
            table[(x, c)] = np.array([softmax(base / tau) for tau in temperatures])
    if kind == "sharp_safe":
        safety = np.array([0.9, 0.6, 0.3])
        perf = {0: np.array([0.85, 0.70, 0.55]), 1: np.array([0.80, 0.65, 0.50])}
    else:
        safety = np.array([0.3, 0.6, 0.9])
        perf = {0: np.array([0.55, 0.70, 0.85]), 1: np.array([0.50, 0.65, 0.80])}
    bank = TeacherBank(k, table, perf, safety)
    return World(vocab, inputs, tasks, contexts, bank)


def identical_teachers_world(k: int = 3) -> World:
    """Every teacher identical: the weight-update target is constant."""
    vocab = VocabularySpec(4)
    inputs = (InputSpec(0, np.array([0.0])),)
    tasks = (TaskSpec(0, (0,), np.array([1.0]), 1.0),)
    contexts = (ContextSpec(0, np.array([0.0]), 1.0),)
    dist = np.array([0.4, 0.3, 0.2, 0.1])
    table = {(0, 0): np.tile(dist, (k, 1))}
    bank = TeacherBank(k, table, {0: np.full(k, 0.5)}, np.full(k, 0.5))
    return World(vocab, inputs, tasks, contexts, bank)


def safety_world() -> World:
    """Two teachers, five tokens, two safety-critical contexts.

    Ground-truth labels (see :func:`safety_world_labels`) are consistent per
    input across the safety contexts, which is the scope of the
    ensemble-safety preservation result. Teacher 1 concentrates near the
    label; teacher 2 hedges, and at input 2 in context 1 both teachers focus
    on the wrong token, so unconstrained distillation lands well below high
    safety thresholds and the constraint activates.
    """
    v = 5
    vocab = VocabularySpec(v, frozenset({0, 1}))
    inputs = tuple(InputSpec(x, np.array([float(x)])) for x in range(3))
    tasks = (TaskSpec(0, (0, 1, 2), np.array([1 / 3, 1 / 3, 1 / 3]), 1.0),)
    contexts = (
        ContextSpec(0, np.array([0.0]), 0.3, is_safety_critical=True),
        ContextSpec(1, np.array([1.0]), 0.3, is_safety_critical=True),
        ContextSpec(2, np.array([2.0]), 0.4),
    )
    focus = {
        (0, 0): 0, (1, 0): 1, (2, 0): 0,
        (0, 1): 0, (1, 1): 1, (2, 1): 1,  # (2, 1): teachers aim off the label
        (0, 2): 3, (1, 2): 3, (2, 2): 3,
    }

    def concentrated(y: int, mass: float) -> np.ndarray:
        p = np.full(v, (1.0 - mass) / (v - 1))
        p[y] = mass
        return p

    table = {}
    for x in range(3):
        for c in range(3):
            y = focus[(x, c)]
            table[(x, c)] = np.array([concentrated(y, 0.72), concentrated(y, 0.32)])
    bank = TeacherBank(2, table, {0: np.array([0.85, 0.55])}, np.array([0.9, 0.2]))
    return World(vocab, inputs, tasks, contexts, bank)


def safety_world_labels() -> dict[tuple[int, int], int]:
    """Ground truth for the safety world, consistent per input on safety contexts."""
    return {
        (0, 0): 0, (1, 0): 1, (2, 0): 0,
        (0, 1): 0, (1, 1): 1, (2, 1): 0,
        (0, 2): 3, (1, 2): 3, (2, 2): 3,
    }


def safety_world_conflicting_labels() -> dict[tuple[int, int], int]:
    """A label map whose safety labels conflict at input 2 across contexts.

    No single per-input distribution satisfies both, so the achievable
    expected safety tops out strictly below 1 and thresholds near 1 are
    infeasible.
    """
    labels = safety_world_labels()
    labels[(2, 1)] = 1
    return labels
