"""Richardson-Romberg extrapolation weights for the weighted multilevel estimator.

The per-level weights ``w_i`` kill the bias expansion terms up to order R; the
cumulative suffix sums ``W_i = w_i + ... + w_R`` are what the weighted
telescoped estimator applies to each level difference. ``w`` comes from the
closed product formula rather than a Vandermonde solve: the linear system is
exponentially ill-conditioned while the product form is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Beyond ~30 levels the products over/underflow double precision; no optimizer
# output ever requests close to that many levels.
MAX_LEVELS = 30

_SUM_TOL = 1e-10
_W1_TOL = 1e-12


@dataclass(frozen=True)
class WeightTable:
    """Extrapolation weights ``w`` and cumulative level weights ``W`` for R levels."""

    alpha: float
    R: int
    w: np.ndarray
    W: np.ndarray


def compute_weights(alpha: float, R: int) -> WeightTable:
    """Compute the order-R extrapolation weights for weak-error order ``alpha``.

    Args:
        alpha: weak-error decay order, > 0.
        R: number of levels, 1 <= R <= MAX_LEVELS.

    Returns:
        WeightTable with ``w`` (sums to 1) and suffix sums ``W`` (W[0] == 1).

    Raises:
        ValueError: on a non-positive alpha or an out-of-range R.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if not 1 <= R <= MAX_LEVELS:
        raise ValueError(
            f"R must be in [1, {MAX_LEVELS}] (product formula over/underflows beyond), got {R}"
        )
    w = np.empty(R)
    for i in range(1, R + 1):
        prod = 1.0
        for j in range(1, R + 1):
            if j != i:
                prod *= abs(1.0 - 2.0 ** (alpha * (j - i)))
        w[i - 1] = (-1.0) ** (R - i) / prod
    W = np.cumsum(w[::-1])[::-1]

    if abs(w.sum() - 1.0) > _SUM_TOL:
        raise RuntimeError(f"weight sum {w.sum()!r} deviates from 1 beyond {_SUM_TOL}")
    if abs(W[0] - 1.0) > _W1_TOL:
        raise RuntimeError(f"W[0] = {W[0]!r} deviates from 1 beyond {_W1_TOL}")
    W[0] = 1.0  # exact by the suffix-sum identity; snap away the last-ulp noise
    return WeightTable(alpha=float(alpha), R=int(R), w=w, W=W)
