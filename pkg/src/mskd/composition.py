"""Product-then-normalize composition of the three weighting scales.

The unified weight for teacher k at (input x, token i, task t, context c) is
the normalized product of the token, task, and context weights. No clipping
is applied after the product; instead the components' bounds induce derived
effective bounds on the unified weights (see :func:`effective_bounds`).

Normalization of the product uses exact rational arithmetic with one
correctly-rounded division per entry, so configurations that are
algebraically uniform produce bit-identical uniform weights. That property
is what lets an all-uniform adaptive trainer reproduce the classical
uniform-mixture trainer exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionMismatch,
    WeightBounds,
    World,
    normalize_exact,
    validate_distribution,
)
from .operators import ContextOperator, TaskOperator, TokenOperator


def weighted_ensemble(weights, dists) -> np.ndarray:
    """Convex combination of K teacher distributions under one weight vector."""
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(dists, dtype=np.float64)
    if p.ndim != 2 or w.shape[0] != p.shape[0]:
        raise DimensionMismatch(
            f"need one weight per distribution, got {w.shape} weights and {p.shape} distributions")
    return validate_distribution(w @ p)


def renormalized_mixture(weight_rows: np.ndarray, dists: np.ndarray) -> np.ndarray:
    """Per-token mixture target, renormalized over the vocabulary.

    ``weight_rows`` is (V, K): one weight vector per token index. When every
    row is identical this reduces to the plain convex combination (the final
    renormalization divides by the weight total, which is 1 up to float dust).
    """
    mix = np.einsum("ik,ki->i", weight_rows, dists)
    return mix / mix.sum()


def effective_bounds(bounds: WeightBounds, k: int) -> tuple[float, float]:
    """Derived bounds the normalized three-scale product respects.

    With every component in [w_min, w_max], the unified weight of a teacher
    is smallest when its own product is minimal and all K-1 rivals are
    maximal, and vice versa.
    """
    lo3, hi3 = bounds.w_min ** 3, bounds.w_max ** 3
    lo = lo3 / (lo3 + (k - 1) * hi3)
    hi = hi3 / (hi3 + (k - 1) * lo3)
    return lo, hi


@dataclass(frozen=True)
class UnifiedWeightOperator:
    """Hierarchical composition of a token, task, and context operator."""

    token_op: TokenOperator
    task_op: TaskOperator
    context_op: ContextOperator
    bounds: WeightBounds

    def components(self, x: int, i: int, t: int, c: int,
                   world: World) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ctx = next(cc for cc in world.contexts if cc.id == c)
        w_tok = self.token_op.weights(x, i, c, world.bank, self.bounds)
        w_task = self.task_op.weights(t, world.bank, self.bounds)
        w_ctx = self.context_op.weights(ctx, world.bank, self.bounds)
        return w_tok, w_task, w_ctx

    def unified_weight(self, x: int, i: int, t: int, c: int, world: World) -> np.ndarray:
        """Normalized product of the three scale weights at one evaluation point."""
        w_tok, w_task, w_ctx = self.components(x, i, t, c, world)
        return normalize_exact(w_tok * w_task * w_ctx)

    def log_decompose(self, x: int, i: int, t: int, c: int,
                      world: World) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per-teacher logs of the components and of their unnormalized product.

        The last array equals the sum of the first three exactly, up to
        floating-point error below 1e-12.
        """
        w_tok, w_task, w_ctx = self.components(x, i, t, c, world)
        product = w_tok * w_task * w_ctx
        return np.log(w_tok), np.log(w_task), np.log(w_ctx), np.log(product)

    def ensemble_target(self, x: int, t: int, c: int, world: World) -> np.ndarray:
        """The distillation target at (x, t, c).

        For token-index-independent operators this is exactly the convex
        combination of teacher distributions under the unified weights. When
        the token operator adjusts weights on safety tokens, the per-token
        mixture is renormalized over the vocabulary instead.
        """
        bank = world.bank
        dists = bank.dists(x, c)
        v = world.vocab.size
        if not self.token_op.token_index_dependent:
            w = self.unified_weight(x, 0, t, c, world)
            rows = np.broadcast_to(w, (v, bank.k))
            return validate_distribution(renormalized_mixture(rows, dists))
        base = self.unified_weight(x, -1, t, c, world)  # -1 is never a safety token
        rows = np.tile(base, (v, 1))
        for i in range(v):
            if i in world.vocab.safety_tokens:
                rows[i] = self.unified_weight(x, i, t, c, world)
        return validate_distribution(renormalized_mixture(rows, dists))


def uniform_unified(bounds: WeightBounds,
                    safety_tokens: frozenset[int] = frozenset()) -> UnifiedWeightOperator:
    """The all-uniform composition (classical equal-weight distillation)."""
    return UnifiedWeightOperator(
        TokenOperator("uniform", safety_tokens=safety_tokens),
        TaskOperator("uniform"),
        ContextOperator("uniform"),
        bounds,
    )
