"""Sampling machinery: nested inner averages, antithetic levels, weighted estimator.

The estimator draws, at each level r, J_r outer scenarios and K_r inner payoffs
per scenario. Level 1 averages the transformed inner mean; upper levels use the
antithetic construction fine - (coarse + coarse')/2, where the two coarse
averages split the fine draws in half, which never increases the level variance
relative to the plain fine-minus-coarse difference and costs the same.

Everything is chunked deterministically (see rng module), so estimates are a
pure function of (plan, seed) regardless of the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFiniteSampleError
from .plans import MlmcPlan
from .rng import ROLE_INNER, ROLE_OUTER, chunk_ranges, outer_chunk_size, stream

# Tolerance when locating the smallest quantile crossing of the cumulative jump
# function; far below any level's jump size 1/J_r yet above cumsum roundoff.
_CROSSING_TOL = 1e-12


@dataclass(frozen=True)
class NestedProblem:
    """Sampling interface for a conditional-expectation risk problem.

    outer_sampler(rng, n): n realizations of the risk factor, shape (n,).
    inner_sampler(rng, x, k): k conditionally i.i.d. payoffs per outer value,
        shape (len(x), k); draws must be conditionally independent given x.
    exact_conditional(x): optional oracle for the conditional mean of the
        payoffs given x (used by tests and calibration diagnostics).
    outer_cost_tau: cost of one outer draw in units of one inner draw, >= 0.
    """

    outer_sampler: Callable[[np.random.Generator, int], np.ndarray]
    inner_sampler: Callable[[np.random.Generator, np.ndarray, int], np.ndarray]
    exact_conditional: Optional[Callable[[np.ndarray], np.ndarray]] = None
    outer_cost_tau: float = 0.0

    def __post_init__(self):
        if self.outer_cost_tau < 0:
            raise ValueError(f"outer_cost_tau must be >= 0, got {self.outer_cost_tau}")


@dataclass(frozen=True)
class PayoffTransform:
    """The scalar transform applied to inner means: indicator, identity, or custom."""

    kind: str
    threshold: Optional[float] = None
    hook: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def indicator(cls, u: float) -> "PayoffTransform":
        """1 if the value is <= u else 0 (pointwise cdf payoff)."""
        return cls(kind="indicator", threshold=float(u))

    @classmethod
    def identity(cls) -> "PayoffTransform":
        return cls(kind="identity")

    @classmethod
    def custom(cls, hook: Callable[[np.ndarray], np.ndarray]) -> "PayoffTransform":
        return cls(kind="custom", hook=hook)

    def __post_init__(self):
        if self.kind not in ("indicator", "identity", "custom"):
            raise ValueError(f"unknown payoff transform kind {self.kind!r}")
        if self.kind == "indicator" and self.threshold is None:
            raise ValueError("indicator transform requires a threshold")
        if self.kind == "custom" and self.hook is None:
            raise ValueError("custom transform requires a hook")

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if self.kind == "indicator":
            return (values <= self.threshold).astype(float)
        if self.kind == "identity":
            return np.asarray(values, dtype=float)
        return np.asarray(self.hook(values), dtype=float)


@dataclass
class LevelStats:
    """Per-level accumulation: sample count, mean, raw second moment, stored arrays."""

    level: int
    n_outer: int
    mean: float
    second_moment: float
    fine_values: Optional[np.ndarray] = field(default=None, repr=False)
    coarse_values: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)


@dataclass
class EstimateResult:
    """Point estimate with per-level statistics and the exactly consumed cost."""

    estimate: float
    per_level: list[LevelStats]
    consumed_cost: float
    seed: int


@dataclass
class CdfQuantileResult:
    """Simultaneous cdf/quantile output with crossing diagnostics."""

    cdf_at_u: float
    quantile_at_p: float
    status: str  # "ok" | "saturated_high"
    multiple_crossings: bool
    n_crossings: int
    result: EstimateResult


def sample_inner_mean(
    problem: NestedProblem, x, K: int, rng: np.random.Generator
) -> np.ndarray:
    """Average of K fresh conditionally independent inner payoffs at each x."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    means = problem.inner_sampler(rng, arr, K).mean(axis=1)
    return float(means[0]) if np.isscalar(x) else means


def _level_means(
    problem: NestedProblem, x: np.ndarray, K2: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fine mean over all K2 draws plus the two half means sharing those draws."""
    if K2 < 2 or K2 % 2 != 0:
        raise ValueError(f"K2 must be even and >= 2, got {K2}")
    n = K2 // 2
    payoffs = problem.inner_sampler(rng, x, K2)
    first = payoffs[:, :n].mean(axis=1)
    second = payoffs[:, n:].mean(axis=1)
    return 0.5 * (first + second), first, second


def sample_level_standard(
    problem: NestedProblem, x, K2: int, f: PayoffTransform, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Standard level pair: transformed fine mean and first-half coarse mean."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    fine, coarse, _ = _level_means(problem, arr, K2, rng)
    return f(fine), f(coarse)


def sample_level_antithetic(
    problem: NestedProblem, x, K2: int, f: PayoffTransform, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Antithetic level triple: fine and both disjoint-half coarse transforms.

    The level value is fine - (coarse1 + coarse2) / 2; total inner draws K2.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    fine, c1, c2 = _level_means(problem, arr, K2, rng)
    return f(fine), f(c1), f(c2)


def _ensure_finite(values: np.ndarray, level: int, offset: int) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        raise NonFiniteSampleError(level=level, index=offset + int(np.argmax(bad)))


def _run_chunks(tasks: Sequence, fn: Callable, threads: int) -> list:
    """Execute chunk tasks, results in task order regardless of scheduling."""
    if threads <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda args: fn(*args), tasks))


def _level_tasks(plan: MlmcPlan) -> list[tuple[int, int, int, int, int]]:
    """(level, chunk_index, start, stop, K_r) for every deterministic chunk."""
    tasks = []
    sizes = plan.inner_sizes()
    counts = plan.outer_counts()
    for r in range(1, plan.R + 1):
        k_r = int(sizes[r - 1])
        for c, start, stop in chunk_ranges(int(counts[r - 1]), outer_chunk_size(k_r)):
            tasks.append((r, c, start, stop, k_r))
    return tasks


def _sample_chunk(
    problem: NestedProblem, seed: int, r: int, c: int, start: int, stop: int, k_r: int
):
    """Draw one chunk of level r: raw inner means (level 1) or the mean triple."""
    n = stop - start
    x = problem.outer_sampler(stream(seed, r, c, ROLE_OUTER), n)
    inner_rng = stream(seed, r, c, ROLE_INNER)
    if r == 1:
        means = problem.inner_sampler(inner_rng, x, k_r).mean(axis=1)
        _ensure_finite(means, r, start)
        return means
    fine, c1, c2 = _level_means(problem, x, k_r, inner_rng)
    _ensure_finite(fine, r, start)
    _ensure_finite(c1, r, start)
    _ensure_finite(c2, r, start)
    return fine, c1, c2


def estimate(
    problem: NestedProblem,
    f: PayoffTransform,
    plan: MlmcPlan,
    seed: int,
    threads: int = 1,
) -> EstimateResult:
    """Run the weighted multilevel estimator for E[f(conditional mean)].

    Level 1 contributes the average of f over inner means; each upper level
    contributes its weight times the average antithetic difference. The result
    is bit-identical for a fixed (plan, seed) under any thread count.
    """
    tasks = _level_tasks(plan)
    raw = _run_chunks(tasks, lambda *t: _sample_chunk(problem, seed, *t), threads)

    counts = plan.outer_counts()
    sums = np.zeros(plan.R)
    sq_sums = np.zeros(plan.R)
    # Chunk partials arrive in task order; summing per level in that order keeps
    # the floating-point reduction schedule fixed.
    for (r, _, _, _, _), data in zip(tasks, raw):
        if r == 1:
            y = f(data)
        else:
            fine, c1, c2 = data
            y = f(fine) - 0.5 * (f(c1) + f(c2))
        sums[r - 1] += float(y.sum())
        sq_sums[r - 1] += float((y * y).sum())

    per_level = [
        LevelStats(
            level=r,
            n_outer=int(counts[r - 1]),
            mean=sums[r - 1] / counts[r - 1],
            second_moment=sq_sums[r - 1] / counts[r - 1],
        )
        for r in range(1, plan.R + 1)
    ]
    value = float(np.sum(plan.level_weights * np.array([s.mean for s in per_level])))
    return EstimateResult(
        estimate=value,
        per_level=per_level,
        consumed_cost=plan.exact_cost(problem.outer_cost_tau),
        seed=seed,
    )


def evaluate_cdf(per_level: list[LevelStats], level_weights: np.ndarray, v: float) -> float:
    """Weighted empirical cdf at v from stored sorted arrays, one binary search per array."""
    total = 0.0
    for stats, a_r in zip(per_level, level_weights):
        fine = stats.fine_values
        if fine is None:
            raise ValueError(f"level {stats.level} carries no stored samples")
        n = stats.n_outer
        if stats.coarse_values is None:
            total += a_r * np.searchsorted(fine, v, side="right") / n
        else:
            c1, c2 = stats.coarse_values
            total += (a_r / n) * (
                np.searchsorted(fine, v, side="right")
                - 0.5 * (np.searchsorted(c1, v, side="right") + np.searchsorted(c2, v, side="right"))
            )
    return float(total)


def _quantile_from_jumps(
    per_level: list[LevelStats], level_weights: np.ndarray, p: float
) -> tuple[float, str, int]:
    """Smallest v where the weighted empirical cdf first reaches p.

    Scans the exact jump set of the piecewise-constant cdf (merged across
    levels), so the smallest crossing is found even when negative level weights
    make the function locally non-monotone. Returns (value, status, n_crossings).
    """
    values = []
    deltas = []
    for stats, a_r in zip(per_level, level_weights):
        n = stats.n_outer
        values.append(stats.fine_values)
        deltas.append(np.full(len(stats.fine_values), a_r / n))
        if stats.coarse_values is not None:
            for arr in stats.coarse_values:
                values.append(arr)
                deltas.append(np.full(len(arr), -0.5 * a_r / n))
    all_v = np.concatenate(values)
    all_d = np.concatenate(deltas)
    order = np.argsort(all_v, kind="stable")
    v_sorted = all_v[order]
    cum = np.cumsum(all_d[order])
    # Collapse ties: the cdf value at a jump point is the cumulative after the
    # whole tie block.
    last_of_run = np.nonzero(np.diff(v_sorted, append=np.inf) > 0)[0]
    v_at = v_sorted[last_of_run]
    f_at = cum[last_of_run]

    above = f_at >= p - _CROSSING_TOL
    rises = int(np.count_nonzero(above[1:] & ~above[:-1])) + int(above[0])
    if not above.any():
        # Mass never accumulates to p on the sampled range (possible only for
        # degenerate inputs); report the extreme sample value, flagged.
        return float(v_at[-1]), "saturated_high", 0
    return float(v_at[int(np.argmax(above))]), "ok", rises


def estimate_cdf_and_quantile(
    problem: NestedProblem,
    plan: MlmcPlan,
    u: float,
    p: float,
    seed: int,
    threads: int = 1,
) -> CdfQuantileResult:
    """Estimate the cdf at u and the p-quantile from one shared set of samples.

    All level samples are drawn once and stored as sorted inner-mean arrays;
    the weighted empirical cdf is then evaluated at any point by binary search,
    and the quantile is its smallest crossing of p. For single-level plans the
    quantile reduces to the ceil(J1 * p)-th order statistic.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    tasks = _level_tasks(plan)
    raw = _run_chunks(tasks, lambda *t: _sample_chunk(problem, seed, *t), threads)

    counts = plan.outer_counts()
    grouped: list[list] = [[] for _ in range(plan.R)]
    for (r, _, _, _, _), data in zip(tasks, raw):
        grouped[r - 1].append(data)

    per_level: list[LevelStats] = []
    ind_u = PayoffTransform.indicator(u)
    for r in range(1, plan.R + 1):
        if r == 1:
            e1 = np.concatenate(grouped[0])
            y = ind_u(e1)
            per_level.append(
                LevelStats(
                    level=1,
                    n_outer=int(counts[0]),
                    mean=float(y.mean()),
                    second_moment=float((y * y).mean()),
                    fine_values=np.sort(e1),
                )
            )
        else:
            fine = np.concatenate([d[0] for d in grouped[r - 1]])
            c1 = np.concatenate([d[1] for d in grouped[r - 1]])
            c2 = np.concatenate([d[2] for d in grouped[r - 1]])
            y = ind_u(fine) - 0.5 * (ind_u(c1) + ind_u(c2))
            per_level.append(
                LevelStats(
                    level=r,
                    n_outer=int(counts[r - 1]),
                    mean=float(y.mean()),
                    second_moment=float((y * y).mean()),
                    fine_values=np.sort(fine),
                    coarse_values=(np.sort(c1), np.sort(c2)),
                )
            )

    cdf_at_u = evaluate_cdf(per_level, plan.level_weights, u)
    if plan.R == 1:
        j1 = per_level[0].n_outer
        idx = min(j1, math.ceil(j1 * p))
        quantile = float(per_level[0].fine_values[idx - 1])
        status, crossings = "ok", 1
    else:
        quantile, status, crossings = _quantile_from_jumps(per_level, plan.level_weights, p)

    result = EstimateResult(
        estimate=cdf_at_u,
        per_level=per_level,
        consumed_cost=plan.exact_cost(problem.outer_cost_tau),
        seed=seed,
    )
    return CdfQuantileResult(
        cdf_at_u=cdf_at_u,
        quantile_at_p=quantile,
        status=status,
        multiple_crossings=crossings > 1,
        n_crossings=crossings,
        result=result,
    )
