"""Life-insurance benchmark: Black-Scholes market, profit-sharing contract, oracles.

A block of policyholder savings (the mathematical reserve) is invested in a
single stock index. Each year the reserve is credited max(guaranteed rate,
profit share of the log-return), a fixed fraction of policyholders exits and is
paid out by selling shares, and at maturity everything is liquidated for the
shareholders. Own funds are the discounted risk-neutral expectation of that
terminal liquidation, which this model admits in closed form, so the one-year
loss function psi, its 99.5% quantile, and the monotonicity certificate are all
exact. Those oracles back the nested-sampling interface produced by
``make_nested_problem``.

Also hosts the scalar normal kernel (cdf/pdf/inverse cdf) used by the oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfc

from .core import NestedProblem

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    """Standard normal cdf via the complementary error function."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


# Acklam's rational approximation for the inverse normal cdf, refined below by
# one Newton step; the refinement brings the error to ~1e-15 on (0, 1).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _norm_inv_left(p: float) -> float:
    """Inverse cdf for p in (0, 0.5]: Acklam's approximation plus one Newton step.

    On this half the cdf value carries full relative precision, so the Newton
    residual is computed without cancellation.
    """
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    err = 0.5 * math.erfc(-x / _SQRT2) - p
    x -= err / (_INV_SQRT_2PI * math.exp(-0.5 * x * x))
    return x


def _norm_inv_scalar(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"norm_inv requires p in (0, 1), got {p}")
    if p > 0.5:
        # 1 - p is exact for p >= 0.5, so the two tails are strictly symmetric.
        return -_norm_inv_left(1.0 - p)
    return _norm_inv_left(p)


def norm_inv(p):
    """Inverse standard normal cdf on (0, 1); raises on the boundary."""
    if np.isscalar(p) or np.asarray(p).ndim == 0:
        return _norm_inv_scalar(float(p))
    arr = np.asarray(p, dtype=float)
    return np.array([_norm_inv_scalar(v) for v in arr.ravel()]).reshape(arr.shape)


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market: risk-free rate, volatility, real-world drift, spot."""

    r: float
    sigma: float
    mu: float
    s0: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.s0 <= 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")


@dataclass(frozen=True)
class ContractParams:
    """Savings contract: maturity, guaranteed rate, profit share, death rate, reserve."""

    T: int
    r_g: float
    gamma: float
    p: float
    MR0: float

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"T must be an integer >= 2, got {self.T}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"p must be in [0, 1), got {self.p}")
        if self.MR0 <= 0:
            raise ValueError(f"MR0 must be > 0, got {self.MR0}")

    def exit_rate(self, t: int) -> float:
        """Annual exit rate: p before maturity, 1 at maturity."""
        return 1.0 if t == self.T else self.p


@dataclass(frozen=True)
class AlmOracles:
    """Closed-form reference values and the quantile-validity certificate."""

    z: float
    d: float
    psi0: float
    x1: float
    x2: float
    scr_quantile: float
    certificate_ok: bool


def default_market() -> MarketParams:
    """Benchmark market parametrization (5% rate, 15% vol, 8% drift, spot 100)."""
    return MarketParams(r=0.05, sigma=0.15, mu=0.08, s0=100.0)


def default_contract() -> ContractParams:
    """Benchmark contract (10y, 0% guarantee, 85% profit share, 2% death rate)."""
    return ContractParams(T=10, r_g=0.0, gamma=0.85, p=0.02, MR0=1000.0)


def compute_z(market: MarketParams, contract: ContractParams) -> float:
    """Expected one-year reserve appreciation factor E[1 + max(r_g, gamma ln R_t)].

    gamma = 0 degenerates the profit share; the guarantee alone applies.
    """
    if contract.gamma == 0.0:
        return 1.0 + contract.r_g
    d = (market.r - market.sigma**2 / 2.0 - contract.r_g / contract.gamma) / market.sigma
    return 1.0 + contract.r_g + contract.gamma * market.sigma * (
        float(norm_pdf(d)) + d * float(norm_cdf(d))
    )


def liability_factor(market: MarketParams, contract: ContractParams, t: int) -> float:
    """Per-unit-reserve value of the remaining exit payouts, seen from year t.

    Equals the bracketed factor multiplying MR_t in the own-funds formula; the
    empty-horizon boundary (t = T) is taken as 1 so OF_T = phi_T * S_T.
    """
    if not 0 <= t <= contract.T:
        raise ValueError(f"t must be in [0, T], got {t}")
    m = contract.T - t
    if m == 0:
        return 1.0
    z = compute_z(market, contract)
    r, p = market.r, contract.p
    head = sum(
        math.exp(-r * k) * (1.0 - p) ** (k - 1) * z**k for k in range(1, m)
    )
    return p * head + math.exp(-r * m) * (1.0 - p) ** (m - 1) * z**m


def own_funds(
    market: MarketParams,
    contract: ContractParams,
    t: int,
    state: tuple[float, float, float],
) -> float:
    """Closed-form own funds at year t from state (phi_t, MR_t, S_t)."""
    phi_t, mr_t, s_t = state
    return phi_t * s_t - mr_t * liability_factor(market, contract, t)


def psi0(market: MarketParams, contract: ContractParams) -> float:
    """Time-0 own funds OF_0 = MR0 * (1 - liability factor at horizon T)."""
    phi0 = contract.MR0 / market.s0
    return own_funds(market, contract, 0, (phi0, contract.MR0, market.s0))


def _year_one_state(market: MarketParams, contract: ContractParams, x):
    """State (phi_1, MR_1, MRtilde_1) after the first contract year given S_1 = x."""
    x = np.asarray(x, dtype=float)
    rho1 = np.maximum(contract.r_g, contract.gamma * np.log(x / market.s0))
    mr_tilde = contract.MR0 * (1.0 + rho1)
    phi0 = contract.MR0 / market.s0
    phi1 = phi0 - contract.p * mr_tilde / x
    mr1 = mr_tilde * (1.0 - contract.p)
    return phi1, mr1, mr_tilde


def psi_loss(market: MarketParams, contract: ContractParams, x):
    """Exact one-year own-fund loss as a function of the year-1 stock value.

    Vectorized over x; kinked (not differentiable) at x1 = s0 * exp(r_g / gamma).
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("psi_loss requires x > 0")
    phi1, mr1, _ = _year_one_state(market, contract, arr)
    of1 = phi1 * arr - mr1 * liability_factor(market, contract, 1)
    out = psi0(market, contract) - of1
    return float(out) if np.isscalar(x) else out


def monotonicity_thresholds(market: MarketParams, contract: ContractParams) -> tuple[float, float]:
    """(x1, x2): loss is decreasing on (0, x1] and [x2, inf); x1 >= x2 certifies globally."""
    if contract.gamma == 0.0:
        # Flat profit share: psi is affine decreasing everywhere.
        return math.inf, 0.0
    x1 = market.s0 * math.exp(contract.r_g / contract.gamma)
    b1 = liability_factor(market, contract, 1)
    x2 = market.s0 * contract.gamma * ((1.0 - contract.p) * b1 + contract.p)
    return x1, x2


def scr_reference(market: MarketParams, contract: ContractParams, alpha: float) -> float:
    """Closed-form capital requirement: the (1 - alpha) quantile of the one-year loss.

    Valid only under the monotonicity certificate x1 >= x2; otherwise raises
    with instructions to fall back to a brute-force quantile of psi(S1).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    x1, x2 = monotonicity_thresholds(market, contract)
    if x1 < x2:
        raise ValueError(
            f"monotonicity certificate failed (x1 = {x1:.6g} < x2 = {x2:.6g}); "
            "the closed-form quantile is invalid, use a brute-force quantile of "
            "psi(S1) instead"
        )
    x_alpha = market.s0 * math.exp(
        market.mu - market.sigma**2 / 2.0 + market.sigma * _norm_inv_scalar(alpha)
    )
    return float(psi_loss(market, contract, x_alpha))


def cdf_reference(market: MarketParams, contract: ContractParams, u: float) -> float:
    """Exact P(one-year loss <= u) by inverting the monotone loss function.

    Requires the monotonicity certificate; the loss is bounded above (worst
    case as the stock collapses) and unbounded below, so the bracket expands
    upward until the loss drops below u.
    """
    x1, x2 = monotonicity_thresholds(market, contract)
    if x1 < x2:
        raise ValueError(
            "monotonicity certificate failed; no closed-form cdf reference available"
        )
    lo = market.s0 * 1e-12
    if psi_loss(market, contract, lo) <= u:
        return 1.0  # u at or above the worst-case loss
    hi = market.s0
    while psi_loss(market, contract, hi) > u:
        hi *= 2.0
        if hi > market.s0 * 1e15:
            return 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if psi_loss(market, contract, mid) > u:
            lo = mid
        else:
            hi = mid
    x_u = 0.5 * (lo + hi)
    zscore = (math.log(x_u / market.s0) - (market.mu - market.sigma**2 / 2.0)) / market.sigma
    return float(1.0 - norm_cdf(zscore))


def compute_oracles(
    market: MarketParams, contract: ContractParams, alpha: float = 0.005
) -> AlmOracles:
    """Bundle all closed-form reference values for reporting and benchmarking."""
    z = compute_z(market, contract)
    if contract.gamma > 0:
        d = (market.r - market.sigma**2 / 2.0 - contract.r_g / contract.gamma) / market.sigma
    else:
        d = -math.inf
    x1, x2 = monotonicity_thresholds(market, contract)
    ok = x1 >= x2
    scr = scr_reference(market, contract, alpha) if ok else math.nan
    return AlmOracles(
        z=z, d=d, psi0=psi0(market, contract), x1=x1, x2=x2,
        scr_quantile=scr, certificate_ok=ok,
    )


def sample_outer(market: MarketParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n year-1 stock values under the real-world measure."""
    drift = market.mu - market.sigma**2 / 2.0
    return market.s0 * np.exp(drift + market.sigma * rng.standard_normal(n))


def sample_loss_payoffs(
    market: MarketParams,
    contract: ContractParams,
    rng: np.random.Generator,
    x: np.ndarray,
    k: int,
) -> np.ndarray:
    """Simulate k discounted terminal-loss payoffs per outer value, shape (n, k).

    Years 2..T evolve risk-neutrally from each x; the year-1 credit uses the
    outer realization itself. The conditional mean over k recovers psi_loss(x).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    r, sig = market.r, market.sigma
    T, p, r_g, gam = contract.T, contract.p, contract.r_g, contract.gamma

    phi1, mr1, _ = _year_one_state(market, contract, x)
    s = np.repeat(x[:, None], k, axis=1)
    phi = np.repeat(phi1[:, None], k, axis=1)
    mr = np.repeat(mr1[:, None], k, axis=1)

    drift = r - 0.5 * sig * sig
    for t in range(2, T + 1):
        incr = drift + sig * rng.standard_normal((n, k))
        rho = np.maximum(r_g, gam * incr)
        np.exp(incr, out=incr)
        s *= incr
        mr *= 1.0 + rho
        d_t = 1.0 if t == T else p
        phi -= d_t * mr / s
        mr *= 1.0 - d_t
    return psi0(market, contract) - math.exp(-r * (T - 1)) * phi * s


def simulate_annual_paths(
    market: MarketParams,
    contract: ContractParams,
    rng: np.random.Generator,
    n: int,
    measure: str = "Q",
) -> dict[str, np.ndarray]:
    """Simulate n full contract paths year by year, keeping all interim states.

    Returns arrays of shape (n, T+1) for the stock and the post-step reserve
    and share count (index t = year), plus the pre-exit reserve (n, T). Used by
    oracle tests that compare the stepwise recursion against the closed-form
    path functionals.
    """
    if measure not in ("P", "Q"):
        raise ValueError(f"measure must be 'P' or 'Q', got {measure}")
    T = contract.T
    rate = market.r if measure == "Q" else market.mu
    drift = rate - 0.5 * market.sigma**2
    s = np.empty((n, T + 1))
    mr = np.empty((n, T + 1))
    phi = np.empty((n, T + 1))
    mr_tilde = np.empty((n, T))
    s[:, 0] = market.s0
    mr[:, 0] = contract.MR0
    phi[:, 0] = contract.MR0 / market.s0
    for t in range(1, T + 1):
        incr = drift + market.sigma * rng.standard_normal(n)
        s[:, t] = s[:, t - 1] * np.exp(incr)
        rho = np.maximum(contract.r_g, contract.gamma * incr)
        d_t = contract.exit_rate(t)
        mr_tilde[:, t - 1] = mr[:, t - 1] * (1.0 + rho)
        phi[:, t] = phi[:, t - 1] - d_t * mr_tilde[:, t - 1] / s[:, t]
        mr[:, t] = mr_tilde[:, t - 1] * (1.0 - d_t)
    return {"S": s, "MR": mr, "phi": phi, "MR_tilde": mr_tilde}


def make_nested_problem(
    market: Optional[MarketParams] = None,
    contract: Optional[ContractParams] = None,
    tau: float = 0.0,
) -> NestedProblem:
    """Wrap the contract simulation as a nested sampling problem.

    The outer sampler draws the year-1 stock value under the real-world
    measure; the inner sampler returns discounted loss payoffs whose
    conditional mean is the exact loss function, exposed as the oracle.
    """
    market = market if market is not None else default_market()
    contract = contract if contract is not None else default_contract()
    # Fail fast on parameter domain violations before any sampling runs.
    psi0(market, contract)

    def outer_sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        return sample_outer(market, rng, n)

    def inner_sampler(rng: np.random.Generator, x: np.ndarray, k: int) -> np.ndarray:
        return sample_loss_payoffs(market, contract, rng, x, k)

    def exact_conditional(x):
        return psi_loss(market, contract, x)

    return NestedProblem(
        outer_sampler=outer_sampler,
        inner_sampler=inner_sampler,
        exact_conditional=exact_conditional,
        outer_cost_tau=tau,
    )
