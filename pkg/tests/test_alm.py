"""Insurance-model oracles: normal kernel, closed forms, and their MC cross-checks."""

import dataclasses
import math

import numpy as np
import pytest

from nestmc import alm

Z_REF = 1.0690  # expected appreciation factor at the benchmark parameters
Q995_REF = 252.76  # benchmark 99.5% loss quantile


# ---------------------------------------------------------------------------
# Normal kernel
# ---------------------------------------------------------------------------


def test_norm_cdf_center():
    assert alm.norm_cdf(0.0) == 0.5


def test_norm_inv_center():
    assert alm.norm_inv(0.5) == pytest.approx(0.0, abs=1e-15)


def test_norm_cdf_symmetry():
    xs = np.linspace(-8.0, 8.0, 161)
    np.testing.assert_allclose(alm.norm_cdf(-xs), 1.0 - alm.norm_cdf(xs), atol=1e-15)


def test_norm_inv_roundtrip():
    # Full precision wherever the cdf value itself retains the information: the
    # whole left half and the right side up to x ~ 5.5 (beyond, Phi(x) sits
    # within a few ulps of 1 and the inverse is capped by representability).
    xs = np.linspace(-8.0, 5.5, 271)
    back = alm.norm_inv(alm.norm_cdf(xs))
    assert np.max(np.abs(back - xs)) <= 1e-9


def test_norm_inv_roundtrip_deep_right_tail_at_floor():
    xs = np.linspace(5.5, 8.0, 51)
    back = alm.norm_inv(alm.norm_cdf(xs))
    floor = np.spacing(1.0) / alm.norm_pdf(xs)  # one-ulp loss in the cdf
    assert np.all(np.abs(back - xs) <= 4.0 * floor + 1e-9)


def test_norm_inv_symmetry():
    # Exact negation whenever 1 - p is itself exactly representable.
    for p in (0.5, 0.25, 0.125, 0.0625, 0.375):
        assert alm.norm_inv(1.0 - p) == -alm.norm_inv(p)
    for p in (0.005, 0.1, 0.3):
        assert alm.norm_inv(1.0 - p) == pytest.approx(-alm.norm_inv(p), abs=1e-12)


def test_norm_inv_domain():
    for p in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(ValueError):
            alm.norm_inv(p)


# ---------------------------------------------------------------------------
# Appreciation factor z
# ---------------------------------------------------------------------------


def quadrature_z(market, contract, panels=2000, order=100) -> float:
    """Oracle: composite Gauss-Legendre (200k nodes) of E[1 + max(r_g, g ln R)]."""
    nodes, wts = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-10.0, 10.0, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * (edges[1] - edges[0])
    x = (mid + half * nodes[None, :]).ravel()
    w = np.tile(half * wts, panels)
    log_ret = market.r - market.sigma**2 / 2.0 + market.sigma * x
    integrand = (1.0 + np.maximum(contract.r_g, contract.gamma * log_ret)) * np.exp(
        -0.5 * x * x
    ) / math.sqrt(2.0 * math.pi)
    return float(np.sum(w * integrand))


def test_z_benchmark_value(market, contract):
    z = alm.compute_z(market, contract)
    assert z == pytest.approx(Z_REF, abs=5e-5)
    assert abs(z - quadrature_z(market, contract)) <= 1e-6


def test_z_guarantee_dominates(market, contract):
    deep = dataclasses.replace(contract, r_g=10.0)
    assert alm.compute_z(market, deep) == pytest.approx(11.0, abs=1e-9)


def test_z_full_profit_share_degenerate(market, contract):
    # Deeply negative guarantee with full profit share: z -> 1 + E[log return].
    deep = dataclasses.replace(contract, r_g=-10.0, gamma=1.0)
    z = alm.compute_z(market, deep)
    assert z == pytest.approx(1.0 + market.r - market.sigma**2 / 2.0, rel=1e-12)
    assert abs(z - quadrature_z(market, deep)) <= 1e-6


def test_z_zero_profit_share(market, contract):
    flat = dataclasses.replace(contract, gamma=0.0, r_g=0.01)
    assert alm.compute_z(market, flat) == 1.01


def test_z_exceeds_guaranteed_growth(market, contract):
    assert alm.compute_z(market, contract) > 1.0 + contract.r_g


# ---------------------------------------------------------------------------
# Own funds and the loss function
# ---------------------------------------------------------------------------


def test_own_funds_maturity_boundary(market, contract):
    # Everyone exits at maturity, so reachable states have a zero reserve and
    # the empty-horizon liability factor (taken as 1) never contributes.
    assert alm.liability_factor(market, contract, contract.T) == 1.0
    assert alm.own_funds(market, contract, contract.T, (3.0, 0.0, 50.0)) == 150.0
    rng = np.random.Generator(np.random.Philox(1))
    paths = alm.simulate_annual_paths(market, contract, rng, 8, measure="Q")
    assert np.all(paths["MR"][:, -1] == 0.0)


def test_psi_loss_domain(market, contract):
    with pytest.raises(ValueError):
        alm.psi_loss(market, contract, 0.0)
    with pytest.raises(ValueError):
        alm.psi_loss(market, contract, np.array([100.0, -1.0]))


def test_psi_kink_at_guarantee_threshold(market, contract):
    # The loss is non-differentiable exactly where the profit share activates.
    x1, _ = alm.monotonicity_thresholds(market, contract)
    assert x1 == pytest.approx(100.0, rel=1e-14)
    h = 1e-6
    left = (alm.psi_loss(market, contract, x1) - alm.psi_loss(market, contract, x1 - h)) / h
    right = (alm.psi_loss(market, contract, x1 + h) - alm.psi_loss(market, contract, x1)) / h
    assert abs(left - right) > 1.0


def test_psi_monotone_under_certificate(market, contract):
    xs = np.linspace(1e-3, 4.0 * market.s0, 4001)
    psi = alm.psi_loss(market, contract, xs)
    assert np.all(np.diff(psi) <= 1e-9)


def test_quantile_of_loss_matches_reference(market, contract):
    x_q = market.s0 * math.exp(
        market.mu - market.sigma**2 / 2.0 + market.sigma * alm.norm_inv(0.005)
    )
    assert alm.psi_loss(market, contract, x_q) == pytest.approx(Q995_REF, abs=0.01)


def test_scr_reference_benchmark(market, contract):
    assert alm.scr_reference(market, contract, 0.005) == pytest.approx(Q995_REF, abs=0.01)


def test_scr_reference_median(market, contract):
    expected = alm.psi_loss(
        market, contract, market.s0 * math.exp(market.mu - market.sigma**2 / 2.0)
    )
    assert alm.scr_reference(market, contract, 0.5) == pytest.approx(expected, rel=1e-12)


def test_scr_certificate_failure_instructs_fallback(market, contract):
    skewed = dataclasses.replace(contract, r_g=-1.0)
    x1, x2 = alm.monotonicity_thresholds(market, skewed)
    assert x1 < x2
    with pytest.raises(ValueError, match="brute-force"):
        alm.scr_reference(market, skewed, 0.005)


def test_oracles_bundle(market, contract):
    oracles = alm.compute_oracles(market, contract)
    assert oracles.certificate_ok
    assert oracles.z > 1.0 + contract.r_g
    assert oracles.x1 >= oracles.x2
    assert oracles.scr_quantile == pytest.approx(Q995_REF, abs=0.01)
    assert math.isfinite(oracles.psi0)


# ---------------------------------------------------------------------------
# Path recursions versus the closed-form path functionals
# ---------------------------------------------------------------------------


def _reference_reserve(contract, s_path, t):
    """MR_t as the product formula over the realized path."""
    mr = contract.MR0
    for u in range(1, t + 1):
        rho = max(contract.r_g, contract.gamma * math.log(s_path[u] / s_path[u - 1]))
        mr *= (1.0 - contract.exit_rate(u)) * (1.0 + rho)
    return mr


def _reference_shares(contract, s_path, t):
    """phi_t as the explicit sum formula over the realized path."""
    phi0 = contract.MR0 / s_path[0]
    total = 0.0
    for i in range(1, t + 1):
        surv = 1.0
        for j in range(1, i):
            surv *= 1.0 - contract.exit_rate(j)
        growth = 1.0
        for j in range(1, i + 1):
            growth *= 1.0 + max(
                contract.r_g, contract.gamma * math.log(s_path[j] / s_path[j - 1])
            )
        total += contract.exit_rate(i) / s_path[i] * surv * growth
    return phi0 - contract.MR0 * total


def test_path_recursions_match_formulas(market, contract):
    rng = np.random.Generator(np.random.Philox(123))
    paths = alm.simulate_annual_paths(market, contract, rng, 50, measure="Q")
    for i in range(0, 50, 7):
        s_path = paths["S"][i]
        for t in (1, 4, contract.T):
            mr_ref = _reference_reserve(contract, s_path, t)
            phi_ref = _reference_shares(contract, s_path, t)
            assert paths["MR"][i, t] == pytest.approx(mr_ref, rel=1e-12)
            assert paths["phi"][i, t] == pytest.approx(phi_ref, rel=1e-12)


@pytest.mark.slow
def test_of0_against_terminal_liquidation_mc(market, contract):
    # Discounted terminal liquidation under the pricing measure averages to OF_0.
    rng = np.random.Generator(np.random.Philox(2024))
    n = 10_000_000
    vals = np.empty(n)
    done = 0
    while done < n:
        m = min(1_000_000, n - done)
        paths = alm.simulate_annual_paths(market, contract, rng, m, measure="Q")
        vals[done : done + m] = (
            math.exp(-market.r * contract.T) * paths["phi"][:, -1] * paths["S"][:, -1]
        )
        done += m
    se = float(np.std(vals, ddof=1) / math.sqrt(n))
    assert abs(vals.mean() - alm.psi0(market, contract)) <= 4.0 * se


def test_of1_martingale_consistency(market, contract):
    # Tower property at the first year: discounted year-1 own funds average to OF_0.
    rng = np.random.Generator(np.random.Philox(77))
    n = 10_000_000
    s1 = market.s0 * np.exp(
        market.r - market.sigma**2 / 2.0 + market.sigma * rng.standard_normal(n)
    )
    of1 = alm.psi0(market, contract) - alm.psi_loss(market, contract, s1)
    vals = math.exp(-market.r) * of1
    se = float(np.std(vals, ddof=1) / math.sqrt(n))
    assert abs(vals.mean() - alm.psi0(market, contract)) <= 4.0 * se


def test_of1_to_of2_tower_property(market, contract):
    # One more telescoping step from a fixed post-year-1 state.
    s1 = 0.9 * market.s0
    rho1 = max(contract.r_g, contract.gamma * math.log(s1 / market.s0))
    mr_tilde = contract.MR0 * (1.0 + rho1)
    phi1 = contract.MR0 / market.s0 - contract.p * mr_tilde / s1
    mr1 = mr_tilde * (1.0 - contract.p)
    of1 = alm.own_funds(market, contract, 1, (phi1, mr1, s1))

    rng = np.random.Generator(np.random.Philox(78))
    n = 1_000_000
    incr = market.r - market.sigma**2 / 2.0 + market.sigma * rng.standard_normal(n)
    s2 = s1 * np.exp(incr)
    rho2 = np.maximum(contract.r_g, contract.gamma * incr)
    mr_tilde2 = mr1 * (1.0 + rho2)
    phi2 = phi1 - contract.p * mr_tilde2 / s2
    mr2 = mr_tilde2 * (1.0 - contract.p)
    b2 = alm.liability_factor(market, contract, 2)
    of2 = phi2 * s2 - mr2 * b2
    vals = math.exp(-market.r) * of2
    se = float(np.std(vals, ddof=1) / math.sqrt(n))
    assert abs(vals.mean() - of1) <= 4.0 * se


@pytest.mark.slow
def test_scr_within_brute_force_order_statistic_band(market, contract):
    rng = np.random.Generator(np.random.Philox(31337))
    n = 10_000_000
    s1 = alm.sample_outer(market, rng, n)
    losses = np.sort(alm.psi_loss(market, contract, s1))
    p = 0.995
    k = int(math.ceil(n * p))
    half = 3.89 * math.sqrt(n * p * (1 - p))  # 4-sigma order-statistic band
    lo = losses[max(0, int(k - half) - 1)]
    hi = losses[min(n - 1, int(k + half) - 1)]
    scr = alm.scr_reference(market, contract, 1 - p)
    assert lo <= scr <= hi


def test_loss_density_concentrates_near_zero(market, contract):
    rng = np.random.Generator(np.random.Philox(5150))
    s1 = alm.sample_outer(market, rng, 1_000_000)
    losses = alm.psi_loss(market, contract, s1)
    assert np.mean(losses <= 0.01 * contract.MR0) >= 0.60


# ---------------------------------------------------------------------------
# Nested problem wiring
# ---------------------------------------------------------------------------


def test_inner_sampler_unbiased_at_spot(market, contract, alm_problem):
    rng = np.random.Generator(np.random.Philox(99))
    x = np.array([float(market.s0)])
    payoffs = alm_problem.inner_sampler(rng, x, 1_000_000)[0]
    se = float(np.std(payoffs, ddof=1) / math.sqrt(len(payoffs)))
    assert abs(payoffs.mean() - alm.psi_loss(market, contract, market.s0)) <= 4.0 * se


def test_smallest_maturity_single_increment(market):
    # T = 2: the inner simulation collapses to one profit-sharing step.
    contract2 = alm.ContractParams(T=2, r_g=0.0, gamma=0.85, p=0.02, MR0=1000.0)
    problem = alm.make_nested_problem(market, contract2, tau=0.0)
    x = np.array([95.0, 120.0])
    draws = problem.inner_sampler(np.random.Generator(np.random.Philox(7)), x, 4)

    rng = np.random.Generator(np.random.Philox(7))
    incr = market.r - market.sigma**2 / 2.0 + market.sigma * rng.standard_normal((2, 4))
    s2 = x[:, None] * np.exp(incr)
    rho1 = np.maximum(0.0, 0.85 * np.log(x / market.s0))[:, None]
    mr_t1 = 1000.0 * (1.0 + rho1)
    phi1 = 1000.0 / market.s0 - 0.02 * mr_t1 / x[:, None]
    mr1 = mr_t1 * (1.0 - 0.02)
    mr_t2 = mr1 * (1.0 + np.maximum(0.0, 0.85 * incr))
    phi2 = phi1 - mr_t2 / s2
    expected = alm.psi0(market, contract2) - math.exp(-market.r) * phi2 * s2
    np.testing.assert_allclose(draws, expected, rtol=1e-12)


def test_exact_conditional_is_loss_oracle(market, contract, alm_problem):
    xs = np.array([70.0, 100.0, 140.0])
    np.testing.assert_array_equal(
        alm_problem.exact_conditional(xs), alm.psi_loss(market, contract, xs)
    )


def test_cdf_reference_consistency(market, contract):
    scr = alm.scr_reference(market, contract, 0.005)
    assert alm.cdf_reference(market, contract, scr) == pytest.approx(0.995, abs=1e-9)
    # Against an empirical fraction away from the deep tail.
    rng = np.random.Generator(np.random.Philox(404))
    s1 = alm.sample_outer(market, rng, 1_000_000)
    losses = alm.psi_loss(market, contract, s1)
    u = 100.0
    frac = float(np.mean(losses <= u))
    se = math.sqrt(frac * (1 - frac) / len(losses))
    assert abs(alm.cdf_reference(market, contract, u) - frac) <= 4.0 * se


def test_invalid_parameters_rejected(market):
    with pytest.raises(ValueError):
        alm.ContractParams(T=1, r_g=0.0, gamma=0.85, p=0.02, MR0=1000.0)
    with pytest.raises(ValueError):
        alm.ContractParams(T=10, r_g=0.0, gamma=1.2, p=0.02, MR0=1000.0)
    with pytest.raises(ValueError):
        alm.MarketParams(r=0.05, sigma=0.0, mu=0.08, s0=100.0)
