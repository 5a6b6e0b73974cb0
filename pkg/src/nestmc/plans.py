"""Cost-aware selection of multilevel plan parameters (J, q, K, R).

Two parametrizations are provided. ``plan_table1`` is the classical closed
form: level count and base inner size from explicit formulas, allocation
optimized at zero outer-sampling cost. ``plan_table2`` numerically minimizes
the effort-per-achieved-precision objective

    phi_bar_star(K, R) / (eps^2 - mu_tilde(K, R)^2)

over integer K and R, with the outer/inner cost ratio tau entering through
gamma_tau. The nested special case (R = 1) additionally has a closed-form
real-valued minimizer via Cardano's formulas.

All emitted plans are self-checked: the cost-ratio identity and the MSE-proxy
bound (saturated exactly for the numerically optimized plans) are recomputed
inline and a violation raises rather than returning a silently wrong plan.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BudgetInfeasibleError, InfeasiblePlanError
from .weights import compute_weights

KIND_NESTED = "nested"
KIND_MLMC = "mlmc"
KIND_ML2R = "ml2r"
_KINDS = (KIND_NESTED, KIND_MLMC, KIND_ML2R)

# K-scan: stop after the objective has strictly risen this many consecutive
# integers (it is unimodal in practice but no proof is assumed), hard cap below.
_SCAN_PATIENCE = 16
_SCAN_CAP = 10**8

_REL_CHECK_TOL = 1e-12

# Largest level sample count representable without risking intp overflow.
_MAX_COUNT = np.iinfo(np.int64).max // 4


@dataclass(frozen=True)
class StructuralConstants:
    """Problem constants feeding every plan computation.

    alpha: weak-error order of the inner-bias expansion, > 0.
    beta: variance-decay order of the level differences, in (0, 2].
    c1: first bias coefficient, != 0.
    growth_a: geometric growth proxy for higher bias coefficients,
        c_r ~ c1 * growth_a**(r-1), > 1.
    c_tilde: optional explicit constant for the level-count formula; when None
        the asymptotic proxy ``growth_a`` is used there and higher-order bias
        terms are always realized through ``c1 * growth_a**(r-1)``.
    V1: level-variance scale, > 0.
    sigma1_sq: first-level variance bound, > 0.
    tau: outer/inner unit cost ratio, >= 0.
    """

    alpha: float
    beta: float
    c1: float
    V1: float
    sigma1_sq: float
    tau: float = 0.0
    growth_a: float = 2.0
    c_tilde: Optional[float] = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.beta <= 2:
            raise ValueError(f"beta must be in (0, 2], got {self.beta}")
        if self.c1 == 0:
            raise ValueError("c1 must be nonzero")
        if self.growth_a <= 1:
            raise ValueError(f"growth_a must be > 1, got {self.growth_a}")
        if self.c_tilde is not None and self.c_tilde <= 0:
            raise ValueError(f"c_tilde must be > 0, got {self.c_tilde}")
        if self.V1 <= 0:
            raise ValueError(f"V1 must be > 0, got {self.V1}")
        if self.sigma1_sq <= 0:
            raise ValueError(f"sigma1_sq must be > 0, got {self.sigma1_sq}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")

    @property
    def sigma1(self) -> float:
        return math.sqrt(self.sigma1_sq)

    def bias_coefficient(self, R: int) -> float:
        """Order-R bias coefficient proxy ``c1 * growth_a**(R-1)``."""
        return self.c1 * self.growth_a ** (R - 1)

    def c_tilde_for_level_search(self) -> float:
        """Constant used by the closed-form level-count formula."""
        return self.c_tilde if self.c_tilde is not None else self.growth_a


@dataclass(frozen=True)
class MlmcPlan:
    """Realized estimator parameters: kind, J, allocation q, base K, R, level weights."""

    kind: str
    J: float
    q: np.ndarray
    K: float
    R: int
    level_weights: np.ndarray
    epsilon: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown plan kind {self.kind!r}")
        if self.J <= 0:
            raise ValueError(f"J must be > 0, got {self.J}")
        if self.K <= 0:
            raise ValueError(f"K must be > 0, got {self.K}")
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        q = np.asarray(self.q, dtype=float)
        w = np.asarray(self.level_weights, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "level_weights", w)
        if q.shape != (self.R,):
            raise ValueError(f"q must have length R={self.R}, got shape {q.shape}")
        if w.shape != (self.R,):
            raise ValueError(f"level_weights must have length R={self.R}")
        if np.any(q <= 0):
            raise ValueError("every q_r must be > 0")
        if abs(q.sum() - 1.0) > 1e-12:
            raise ValueError(f"sum(q) = {q.sum()!r} deviates from 1 beyond 1e-12")
        if w[0] != 1.0:
            raise ValueError(f"level_weights[0] must be 1, got {w[0]!r}")
        if self.kind == KIND_NESTED and self.R != 1:
            raise ValueError("nested plans must have R = 1")
        if self.kind == KIND_MLMC and not np.all(w == 1.0):
            raise ValueError("standard multilevel plans must have unit level weights")
        if max(self.outer_counts()) > _MAX_COUNT:
            raise InfeasiblePlanError(
                f"J_r = {max(self.outer_counts())} overflows the supported sample count"
            )

    @property
    def K1(self) -> int:
        return math.ceil(self.K)

    def inner_sizes(self) -> np.ndarray:
        """Per-level inner sample counts K_r = ceil(K) * 2**(r-1)."""
        return self.K1 * 2 ** np.arange(self.R, dtype=np.int64)

    def outer_counts(self) -> np.ndarray:
        """Per-level outer sample counts J_r = ceil(J * q_r), each >= 1."""
        return np.maximum(1, np.ceil(self.J * self.q).astype(np.int64))

    def exact_cost(self, tau: float) -> float:
        """Realized cost sum_r J_r * (tau + K_r) in inner-sample units."""
        return float(np.sum(self.outer_counts() * (tau + self.inner_sizes().astype(float))))


@dataclass(frozen=True)
class ProxyEvaluation:
    """Closed-form proxies for one (K, R) candidate at a given precision."""

    mu_tilde: float
    v_bar: float
    kappa_tau: float
    phi_bar_star: float
    objective: float


def gamma_tau(tau: float, K: int) -> float:
    """Sampling cost tau + K of one conditional average built from K inner draws."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return tau + K


def level_inner_sizes(K: float, R: int) -> np.ndarray:
    return math.ceil(K) * 2 ** np.arange(R, dtype=np.int64)


def cost_per_outer(q: np.ndarray, K: float, R: int, tau: float) -> float:
    """kappa_tau = sum_r q_r * gamma_tau(K_r)."""
    sizes = level_inner_sizes(K, R)
    return float(np.sum(np.asarray(q) * (tau + sizes)))


def approx_total_cost(plan: MlmcPlan, tau: float) -> float:
    """Approximate cost J * kappa_tau, the planning-time cost proxy."""
    return plan.J * cost_per_outer(plan.q, plan.K, plan.R, tau)


def mu_tilde(consts: StructuralConstants, K: float, R: int, kind: str) -> float:
    """Tractable bias proxy of a plan with base inner size K and R levels."""
    K1 = math.ceil(K)
    if kind == KIND_ML2R:
        cR = consts.bias_coefficient(R)
        return (-1.0) ** (R - 1) * cR / (
            K1 ** (consts.alpha * R) * 2.0 ** (consts.alpha * R * (R - 1) / 2.0)
        )
    return consts.c1 / (K1**consts.alpha * 2.0 ** ((R - 1) * consts.alpha))


def _weights_for(consts: StructuralConstants, R: int, kind: str) -> np.ndarray:
    if kind == KIND_ML2R:
        return compute_weights(consts.alpha, R).W
    return np.ones(R)


def sigma_bar_levels(consts: StructuralConstants, K: float, R: int, level_weights: np.ndarray) -> np.ndarray:
    """Per-level deviation bounds sigma_bar(r, K).

    Level 1 carries the first-level bound sigma1; upper levels decay as
    |A_r| * sqrt(V1) / K_r**(beta/2).
    """
    sizes = level_inner_sizes(K, R).astype(float)
    out = np.empty(R)
    out[0] = consts.sigma1
    if R > 1:
        out[1:] = np.abs(level_weights[1:]) * math.sqrt(consts.V1) / sizes[1:] ** (consts.beta / 2.0)
    return out


def optimal_q(
    consts: StructuralConstants, K: float, R: int, level_weights: np.ndarray
) -> tuple[np.ndarray, float]:
    """Cost-weighted optimal allocation q_r = sigma_bar(r,K) / (sqrt(gamma_tau(K_r)) * mu).

    Returns the allocation and the normalizer mu. Unique minimizer of the
    effort bound by the Cauchy-Schwarz equality case.
    """
    sizes = level_inner_sizes(K, R).astype(float)
    s = sigma_bar_levels(consts, K, R, level_weights)
    raw = s / np.sqrt(consts.tau + sizes)
    mu = float(raw.sum())
    return raw / mu, mu


def v_bar(consts: StructuralConstants, q: np.ndarray, K: float, R: int, level_weights: np.ndarray) -> float:
    """Unit-variance bound sum_r sigma_bar(r,K)^2 / q_r."""
    s = sigma_bar_levels(consts, K, R, level_weights)
    return float(np.sum(s * s / np.asarray(q)))


def phi_bar(consts: StructuralConstants, q: np.ndarray, K: float, R: int, level_weights: np.ndarray) -> float:
    """Effort bound v_bar * kappa_tau at allocation q."""
    return v_bar(consts, q, K, R, level_weights) * cost_per_outer(q, K, R, consts.tau)


def phi_bar_star(consts: StructuralConstants, K: float, R: int, level_weights: np.ndarray) -> float:
    """Optimized effort (sum_r sigma_bar(r,K) * sqrt(gamma_tau(K_r)))^2."""
    sizes = level_inner_sizes(K, R).astype(float)
    s = sigma_bar_levels(consts, K, R, level_weights)
    return float(np.sum(s * np.sqrt(consts.tau + sizes)) ** 2)


def optimal_J(
    consts: StructuralConstants,
    q: np.ndarray,
    K: float,
    R: int,
    epsilon: float,
    kind: str,
    level_weights: np.ndarray,
) -> float:
    """Outer budget J saturating the MSE proxy: v_bar / J + mu_tilde^2 = eps^2."""
    mt = mu_tilde(consts, K, R, kind)
    if abs(mt) >= epsilon:
        raise InfeasiblePlanError(
            f"|mu_tilde| = {abs(mt):.6g} >= epsilon = {epsilon:.6g} at K={K}, R={R}; "
            "bias proxy alone exceeds the precision target"
        )
    return v_bar(consts, q, K, R, level_weights) / (epsilon**2 - mt * mt)


def mse_proxy(
    consts: StructuralConstants,
    J: float,
    q: np.ndarray,
    K: float,
    R: int,
    kind: str,
    level_weights: np.ndarray,
) -> float:
    """Tractable MSE bound v_bar / J + mu_tilde^2."""
    mt = mu_tilde(consts, K, R, kind)
    return v_bar(consts, q, K, R, level_weights) / J + mt * mt


def proxy_evaluation(
    consts: StructuralConstants, K: float, R: int, epsilon: float, kind: str
) -> ProxyEvaluation:
    """Evaluate all proxies for one (K, R) candidate at precision epsilon."""
    W = _weights_for(consts, R, kind if kind != KIND_NESTED else KIND_MLMC)
    q, _ = optimal_q(consts, K, R, W)
    mt = mu_tilde(consts, K, R, kind if kind != KIND_NESTED else KIND_MLMC)
    pbs = phi_bar_star(consts, K, R, W)
    den = epsilon**2 - mt * mt
    objective = pbs / den if den > 0 else math.inf
    return ProxyEvaluation(
        mu_tilde=mt,
        v_bar=v_bar(consts, q, K, R, W),
        kappa_tau=cost_per_outer(q, K, R, consts.tau),
        phi_bar_star=pbs,
        objective=objective,
    )


# ---------------------------------------------------------------------------
# Closed-form parametrization
# ---------------------------------------------------------------------------


def table1_level_count(
    consts: StructuralConstants, epsilon: float, kind: str, K_floor: int = 10
) -> int:
    """Closed-form level count R(eps); clamped to >= 2 (always multilevel)."""
    return _table1_level_count(consts, epsilon, kind, K_floor)


def _table1_level_count(consts: StructuralConstants, epsilon: float, kind: str, K_floor: int) -> int:
    a = consts.alpha
    if kind == KIND_ML2R:
        ct = consts.c_tilde_for_level_search()
        x = 0.5 + math.log2(ct ** (1.0 / a) / K_floor)
        R = math.ceil(x + math.sqrt(x * x + 2.0 * math.log2(math.sqrt(1 + 4 * a) / epsilon) / a))
    else:
        R = math.ceil(
            1.0
            + math.log2(abs(consts.c1) ** (1.0 / a) / K_floor)
            + math.log2(math.sqrt(1 + 2 * a) / epsilon) / a
        )
    return max(2, R)


def _table1_K_plus(consts: StructuralConstants, epsilon: float, R: int, kind: str) -> float:
    a = consts.alpha
    if kind == KIND_ML2R:
        # Higher-order bias realized through c1 * growth_a**(R-1), cf. bias_coefficient.
        ct_R = abs(consts.bias_coefficient(R)) ** (1.0 / R)
        return (
            (1 + 2 * a * R) ** (1.0 / (2 * a * R))
            * epsilon ** (-1.0 / (a * R))
            * ct_R ** (1.0 / a)
            * 2.0 ** (-(R - 1) / 2.0)
        )
    return (
        (1 + 2 * a) ** (1.0 / (2 * a))
        * epsilon ** (-1.0 / a)
        * abs(consts.c1) ** (1.0 / a)
        * 2.0 ** (-(R - 1.0))
    )


def plan_table1(
    consts: StructuralConstants, epsilon: float, kind: str, K_floor: int = 10
) -> MlmcPlan:
    """Closed-form plan: explicit R(eps) and K(eps), allocation optimized at tau = 0.

    The allocation and J deliberately ignore ``consts.tau`` (this parametrization
    predates cost-ratio awareness); only realized costs feel tau.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if kind not in (KIND_MLMC, KIND_ML2R):
        raise ValueError(f"table-1 plans are 'mlmc' or 'ml2r', got {kind!r}")
    if K_floor < 1:
        raise ValueError(f"K_floor must be >= 1, got {K_floor}")
    R = _table1_level_count(consts, epsilon, kind, K_floor)
    K = float(K_floor * math.ceil(_table1_K_plus(consts, epsilon, R, kind) / K_floor))
    W = _weights_for(consts, R, kind)
    q, _ = optimal_q(dataclasses.replace(consts, tau=0.0), K, R, W)
    M_eps = 1.0 + 1.0 / (2 * consts.alpha * (R if kind == KIND_ML2R else 1))
    J = M_eps * v_bar(consts, q, K, R, W) / epsilon**2
    plan = MlmcPlan(kind=kind, J=J, q=q, K=K, R=R, level_weights=W, epsilon=epsilon)
    _check_emitted_plan(consts, plan, epsilon, saturated=False)
    return plan


# ---------------------------------------------------------------------------
# Numerically optimized parametrization
# ---------------------------------------------------------------------------


def K_feasibility_floor(consts: StructuralConstants, epsilon: float, R: int, kind: str) -> int:
    """Smallest integer K with |mu_tilde(K, R)| < epsilon (explicit constraint floor)."""
    a = consts.alpha
    if kind in (KIND_MLMC, KIND_NESTED):
        Kl = math.floor((abs(consts.c1) / epsilon) ** (1.0 / a) / 2.0 ** (R - 1)) + 1
    else:
        cR = abs(consts.bias_coefficient(R))
        Kl = math.floor((cR / epsilon) ** (1.0 / (a * R)) * 2.0 ** (-(R - 1) / 2.0)) + 1
    Kl = max(1, Kl)
    # Guard against floating-point edge cases in the closed form.
    mkind = KIND_ML2R if kind == KIND_ML2R else KIND_MLMC
    while abs(mu_tilde(consts, Kl, R, mkind)) >= epsilon:
        Kl += 1
    return Kl


def _objective(
    consts: StructuralConstants, K: int, R: int, epsilon: float, kind: str, W: np.ndarray
) -> float:
    mt = mu_tilde(consts, K, R, kind)
    den = epsilon**2 - mt * mt
    if den <= 0:
        return math.inf
    return phi_bar_star(consts, K, R, W) / den


def _objective_block(
    consts: StructuralConstants, ks: np.ndarray, R: int, epsilon: float, kind: str, W: np.ndarray
) -> np.ndarray:
    """Vectorized effort-over-precision objective for integer candidates ``ks``."""
    kf = ks.astype(float)
    sizes = kf[:, None] * 2.0 ** np.arange(R)  # (n, R)
    sig = np.empty_like(sizes)
    sig[:, 0] = consts.sigma1
    if R > 1:
        sig[:, 1:] = (
            np.abs(W[1:]) * math.sqrt(consts.V1) / sizes[:, 1:] ** (consts.beta / 2.0)
        )
    pbs = np.sum(sig * np.sqrt(consts.tau + sizes), axis=1) ** 2
    if kind == KIND_ML2R:
        cR = consts.bias_coefficient(R)
        mt = cR / (kf ** (consts.alpha * R) * 2.0 ** (consts.alpha * R * (R - 1) / 2.0))
    else:
        mt = consts.c1 / (kf**consts.alpha * 2.0 ** ((R - 1) * consts.alpha))
    den = epsilon**2 - mt * mt
    out = np.full(len(ks), math.inf)
    ok = den > 0
    out[ok] = pbs[ok] / den[ok]
    return out


_SCAN_BLOCK = 8192


def _scan_K(
    consts: StructuralConstants, epsilon: float, R: int, kind: str, W: np.ndarray
) -> tuple[int, float]:
    """Ascending integer scan from the feasibility floor; ties kept at smaller K.

    Terminates once the objective has gone _SCAN_PATIENCE consecutive integers
    without improving on the running best. Evaluated in vectorized blocks that
    replicate the sequential stopping point exactly.
    """
    mkind = KIND_ML2R if kind == KIND_ML2R else KIND_MLMC
    start = K_feasibility_floor(consts, epsilon, R, mkind)
    best_K, best_val = start, math.inf
    rises = 0
    k = start
    while k <= _SCAN_CAP:
        ks = np.arange(k, min(k + _SCAN_BLOCK, _SCAN_CAP + 1))
        vals = _objective_block(consts, ks, R, epsilon, mkind, W)
        # Running best strictly before each index (carrying the previous blocks).
        before = np.concatenate(
            ([best_val], np.minimum(best_val, np.minimum.accumulate(vals)[:-1]))
        )
        stopped = False
        prev = -1
        for idx in np.nonzero(vals < before)[0]:
            gap = int(idx) - prev - 1
            if (rises if prev == -1 else 0) + gap >= _SCAN_PATIENCE:
                stopped = True
                break
            best_K, best_val = int(ks[idx]), float(vals[idx])
            rises = 0
            prev = int(idx)
        if not stopped:
            tail = len(ks) - 1 - prev
            rises = rises + tail if prev == -1 else tail
            stopped = rises >= _SCAN_PATIENCE
        if stopped:
            break
        k = int(ks[-1]) + 1
    return best_K, best_val


def plan_table2(
    consts: StructuralConstants,
    epsilon: float,
    kind: str,
    K_floor: int = 10,
    force_R: Optional[int] = None,
) -> MlmcPlan:
    """Numerically optimized plan minimizing effort over achieved precision.

    R is scanned over 1..R(eps) (the closed-form level count), K over integers
    from the explicit feasibility floor upward; q and J then follow in closed
    form. ``force_R=1`` yields the plain nested estimator tuned by the same
    objective. Guaranteed not to cost more than the closed-form plan at equal
    epsilon, and to saturate the MSE proxy exactly.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if kind not in (KIND_NESTED, KIND_MLMC, KIND_ML2R):
        raise ValueError(f"unknown plan kind {kind!r}")
    if force_R is None and kind == KIND_NESTED:
        force_R = 1
    if force_R is not None:
        if force_R < 1:
            raise ValueError(f"force_R must be >= 1, got {force_R}")
        r_range: list[int] = [force_R]
    else:
        r_range = list(range(1, _table1_level_count(consts, epsilon, kind, K_floor) + 1))

    best: Optional[tuple[float, int, int]] = None
    for R in r_range:
        W = _weights_for(consts, R, kind)
        K, val = _scan_K(consts, epsilon, R, kind, W)
        if best is None or val < best[0]:
            best = (val, K, R)
    assert best is not None
    _, K, R = best
    W = _weights_for(consts, R, kind)
    q, _ = optimal_q(consts, float(K), R, W)
    mkind = KIND_ML2R if kind == KIND_ML2R else KIND_MLMC
    J = optimal_J(consts, q, float(K), R, epsilon, mkind, W)
    plan = MlmcPlan(
        kind=kind, J=J, q=q, K=float(K), R=R, level_weights=W, epsilon=epsilon
    )
    _check_emitted_plan(consts, plan, epsilon, saturated=True)
    return plan


def diagnostics_R_lower(consts: StructuralConstants, epsilon: float, kind: str, K_floor: int = 10) -> int:
    """Theoretical lower end of the level scan, reported for diagnostics only."""
    return max(1, math.ceil(math.log10(_table1_level_count(consts, epsilon, kind, K_floor))))


# ---------------------------------------------------------------------------
# Nested closed form (Cardano)
# ---------------------------------------------------------------------------


def nested_K_real(consts: StructuralConstants, epsilon: float) -> float:
    """Real-valued minimizer of the nested (R=1) effort objective.

    Closed-form root of the stationarity cubic eps^2 x^3 - 3 c1^2 x - 2 tau c1^2,
    branching on the discriminant sign; requires alpha = 1 (the cubic arises
    only at that order).
    """
    if consts.alpha != 1.0:
        raise ValueError("the nested closed form requires alpha = 1")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    b = abs(consts.c1)
    tau = consts.tau
    if tau == 0.0:
        return math.sqrt(3.0) * b / epsilon
    ratio = epsilon * tau / b
    if ratio < 1.0:
        # Three real roots; the admissible one is the k = 0 Cardano branch.
        return (b / epsilon) * 2.0 * math.cos(math.acos(ratio) / 3.0)
    if ratio == 1.0:
        # Double-root boundary: the cubic factors as (x - 2 tau)(x + tau)^2.
        return 2.0 * tau
    s = math.sqrt(tau * tau - (b / epsilon) ** 2)
    t1 = (tau + s) ** (1.0 / 3.0)
    # tau - s rationalized to avoid cancellation for large tau.
    t2 = ((b / epsilon) ** 2 / (tau + s)) ** (1.0 / 3.0)
    return (b / epsilon) ** (2.0 / 3.0) * (t1 + t2)


def nested_K_cardano(consts: StructuralConstants, epsilon: float) -> tuple[float, int]:
    """Closed-form nested base inner size: the real root and its best integer neighbor.

    The integer is whichever of floor/ceil (clamped at the feasibility floor)
    gives the smaller nested objective.
    """
    K_real = nested_K_real(consts, epsilon)
    Kl = K_feasibility_floor(consts, epsilon, 1, KIND_MLMC)
    W = np.ones(1)
    cands = sorted({max(Kl, math.floor(K_real)), max(Kl, math.ceil(K_real))})
    vals = [_objective(consts, k, 1, epsilon, KIND_MLMC, W) for k in cands]
    K_int = cands[int(np.argmin(vals))]
    return K_real, int(K_int)


# ---------------------------------------------------------------------------
# Budget inversion
# ---------------------------------------------------------------------------


def plan_for_epsilon(
    consts: StructuralConstants,
    epsilon: float,
    kind: str,
    table: int,
    K_floor: int = 10,
    force_R: Optional[int] = None,
) -> MlmcPlan:
    """Dispatch to the requested parametrization."""
    if table == 1:
        if force_R is not None:
            raise ValueError("force_R applies to the numerically optimized plans only")
        return plan_table1(consts, epsilon, kind, K_floor=K_floor)
    if table == 2:
        return plan_table2(consts, epsilon, kind, K_floor=K_floor, force_R=force_R)
    raise ValueError(f"table must be 1 or 2, got {table}")


def epsilon_for_budget(
    consts: StructuralConstants,
    budget: float,
    kind: str,
    table: int,
    K_floor: int = 10,
    force_R: Optional[int] = None,
    lo: float = 1e-8,
    hi: float = 1.0,
    iterations: int = 60,
) -> tuple[float, MlmcPlan]:
    """Invert the planned cost curve: find epsilon with cost ~= budget.

    Bisects on log-epsilon using monotonicity of the planned cost in epsilon.
    """
    if budget <= 0:
        raise ValueError(f"budget must be > 0, got {budget}")

    def cost_at(eps: float) -> float:
        plan = plan_for_epsilon(consts, eps, kind, table, K_floor=K_floor, force_R=force_R)
        return approx_total_cost(plan, consts.tau)

    if cost_at(hi) > budget:
        raise BudgetInfeasibleError(
            f"budget {budget:.6g} is below the cost {cost_at(hi):.6g} of the coarsest "
            f"plan at epsilon = {hi}"
        )
    if cost_at(lo) < budget:
        raise BudgetInfeasibleError(
            f"budget {budget:.6g} exceeds the cost of the finest bracketed plan at epsilon = {lo}"
        )
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(iterations):
        mid = 0.5 * (llo + lhi)
        if cost_at(math.exp(mid)) > budget:
            llo = mid
        else:
            lhi = mid
    # The closed-form cost curve can jump at level-count transitions; return
    # whichever bracket endpoint realizes the cost closest to the budget.
    cands = [math.exp(llo), math.exp(lhi)]
    eps = min(cands, key=lambda e: abs(cost_at(e) - budget))
    return eps, plan_for_epsilon(consts, eps, kind, table, K_floor=K_floor, force_R=force_R)


# ---------------------------------------------------------------------------
# Inline plan checks
# ---------------------------------------------------------------------------


def _check_emitted_plan(
    consts: StructuralConstants, plan: MlmcPlan, epsilon: float, saturated: bool
) -> None:
    """Recompute the cost-ratio identity and the MSE proxy for an emitted plan.

    These are closed-form identities; a violation indicates an internal error,
    never a property of the inputs, hence RuntimeError.
    """
    c_tau = approx_total_cost(plan, consts.tau)
    c_0 = approx_total_cost(plan, 0.0)
    ratio_rhs = 1.0 + consts.tau / (plan.K1 * float(np.sum(plan.q * 2.0 ** np.arange(plan.R))))
    if abs(c_tau / c_0 - ratio_rhs) > _REL_CHECK_TOL * max(1.0, abs(ratio_rhs)):
        raise RuntimeError(
            f"cost-ratio identity violated: {c_tau / c_0!r} vs {ratio_rhs!r} for plan {plan}"
        )
    mkind = KIND_ML2R if plan.kind == KIND_ML2R else KIND_MLMC
    mt = mu_tilde(consts, plan.K, plan.R, mkind)
    if abs(mt) >= epsilon:
        raise RuntimeError(f"emitted plan is infeasible: |mu_tilde| = {abs(mt)} >= {epsilon}")
    proxy = mse_proxy(consts, plan.J, plan.q, plan.K, plan.R, mkind, plan.level_weights)
    if saturated:
        if abs(proxy - epsilon**2) > _REL_CHECK_TOL * epsilon**2:
            raise RuntimeError(
                f"MSE proxy not saturated: {proxy!r} vs epsilon^2 = {epsilon**2!r}"
            )
    elif proxy > epsilon**2 * (1.0 + _REL_CHECK_TOL):
        raise RuntimeError(f"MSE proxy {proxy!r} exceeds epsilon^2 = {epsilon**2!r}")
