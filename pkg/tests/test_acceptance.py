"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Statistical criteria state their tolerance inline; deterministic criteria pin
exact values. The desk pilot and the desk benchmark are session/module scoped
so the heavy sampling runs once.
"""

import dataclasses
import json
import math
import time

import numpy as np
import pytest

from nestmc import alm, bench, cli
from nestmc.core import sample_level_antithetic
from nestmc.plans import (
    KIND_ML2R,
    KIND_MLMC,
    K_feasibility_floor,
    approx_total_cost,
    epsilon_for_budget,
    mse_proxy,
    nested_K_cardano,
    plan_table1,
    plan_table2,
)
from nestmc.rng import ROLE_INNER, ROLE_OUTER, chunk_ranges, stream
from nestmc.weights import compute_weights

Z90_ONE_SIDED = 1.6448536269514722


def criterion(name: str, ok: bool, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. Closed-form quantile reference
# ---------------------------------------------------------------------------


def test_c01_closed_form_quantile_reference(capsys):
    start = time.perf_counter()
    code = cli.main(["alm-reference"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    payload = json.loads(out)
    value = payload["scr_quantile"]
    ok = code == 0 and abs(value - 252.76) <= 0.01 and elapsed < 1.0
    with capsys.disabled():
        criterion(
            "closed-form-quantile", ok,
            f"(value={value:.4f}, target=252.76±0.01, {elapsed*1e3:.0f} ms)",
        )


# ---------------------------------------------------------------------------
# 2. Parameter-table reproduction (deterministic)
# ---------------------------------------------------------------------------

TABLE1_EXPECTED = {0.0: 1.37e7, 25.0: 8.98e6, 50.0: 6.19e6, 75.0: 4.73e6, 100.0: 3.82e6}
TABLE2_EXPECTED = {
    0.0: (2.23e7, 10, 3),
    25.0: (6.30e6, 38, 2),
    50.0: (4.71e6, 39, 2),
    75.0: (3.72e6, 41, 2),
    100.0: (3.08e6, 43, 2),
}


def test_c02_parameter_table_reproduction(benchmark_constants):
    budget = 5e8
    failures = []
    for tau, j_ref in TABLE1_EXPECTED.items():
        consts = dataclasses.replace(benchmark_constants, tau=tau)
        _, plan = epsilon_for_budget(consts, budget, KIND_ML2R, table=1)
        if (plan.K, plan.R) != (10.0, 4):
            failures.append(f"closed-form tau={tau}: (K,R)=({plan.K},{plan.R}) != (10,4)")
        if abs(plan.J - j_ref) > 0.02 * j_ref:
            failures.append(
                f"closed-form tau={tau}: J={plan.J:.4g} vs published {j_ref:.4g} "
                f"({abs(plan.J - j_ref) / j_ref:.1%} off)"
            )
    for tau, (j_ref, k_ref, r_ref) in TABLE2_EXPECTED.items():
        consts = dataclasses.replace(benchmark_constants, tau=tau)
        _, plan = epsilon_for_budget(consts, budget, KIND_ML2R, table=2)
        if plan.R != r_ref or abs(plan.K - k_ref) > 1:
            failures.append(
                f"optimized tau={tau}: (K,R)=({plan.K},{plan.R}) != ({k_ref},{r_ref})"
            )
        if abs(plan.J - j_ref) > 0.02 * j_ref:
            failures.append(
                f"optimized tau={tau}: J={plan.J:.4g} vs published {j_ref:.4g}"
            )
    criterion(
        "parameter-tables", not failures,
        "(all 10 rows)" if not failures else "; ".join(failures),
    )


# ---------------------------------------------------------------------------
# 3. Antithetic variance identity (statistical)
# ---------------------------------------------------------------------------


def variance_identity_probe(problem, f, N, n_outer, n_rep, seed):
    """D = Var[standard level] - Var[antithetic level] versus H = E[Var(Y_N|X)]/2.

    Both level constructions share draws per outer sample; the conditional
    variance uses n_rep fresh size-N averages per outer sample.
    """
    k2 = 2 * N
    ds = np.empty(n_outer)
    da = np.empty(n_outer)
    h = np.empty(n_outer)
    for c, start, stop in chunk_ranges(n_outer, 4096):
        m = stop - start
        x = problem.outer_sampler(stream(seed, 1, c, ROLE_OUTER), m)
        fine, c1, c2 = sample_level_antithetic(problem, x, k2, f, stream(seed, 1, c, ROLE_INNER))
        ds[start:stop] = fine - c1
        da[start:stop] = fine - 0.5 * (c1 + c2)
        rep_rng = stream(seed, 2, c, ROLE_INNER)
        payoffs = problem.inner_sampler(rep_rng, x, n_rep * N)
        y = f(payoffs.reshape(m, n_rep, N).mean(axis=2))
        h[start:stop] = y.var(axis=1, ddof=1)
    d_paired = ds**2 - da**2
    d_hat = float(d_paired.mean()) - (float(ds.mean()) ** 2 - float(da.mean()) ** 2)
    se_d = float(d_paired.std(ddof=1) / math.sqrt(n_outer))
    h_hat = 0.5 * float(h.mean())
    se_h = 0.5 * float(h.std(ddof=1) / math.sqrt(n_outer))
    return d_hat, se_d, h_hat, se_h


@pytest.mark.slow
def test_c03_antithetic_variance_identity(alm_problem, indicator_at_quantile):
    d_hat, se_d, h_hat, se_h = variance_identity_probe(
        alm_problem, indicator_at_quantile, N=8, n_outer=100_000, n_rep=64, seed=314
    )
    identity_ok = abs(d_hat - h_hat) <= 3.0 * (se_d + se_h)
    positive_ok = d_hat > 3.0 * se_d
    criterion(
        "antithetic-variance-identity", identity_ok and positive_ok,
        f"(D={d_hat:.5g}±{se_d:.2g}, H={h_hat:.5g}±{se_h:.2g}, "
        f"|D-H|={abs(d_hat - h_hat):.2g} <= {3 * (se_d + se_h):.2g}, D>3SE={positive_ok})",
    )


# ---------------------------------------------------------------------------
# 4. Cost dominance of the numerically optimized plans
# ---------------------------------------------------------------------------


def test_c04_cost_dominance(benchmark_constants):
    worst = 0.0
    for kind in (KIND_MLMC, KIND_ML2R):
        for exp in (-2.0, -2.5, -3.0, -3.5, -4.0, -4.5):
            for tau in (0.0, 25.0, 100.0):
                eps = 10.0**exp
                consts = dataclasses.replace(benchmark_constants, tau=tau)
                c1 = approx_total_cost(plan_table1(consts, eps, kind), tau)
                c2 = approx_total_cost(plan_table2(consts, eps, kind), tau)
                worst = max(worst, (c2 - c1) / c1)
    criterion("cost-dominance", worst <= 1e-9, f"(max relative excess {worst:.2e})")


# ---------------------------------------------------------------------------
# 5. Nested closed-form base size (Cardano)
# ---------------------------------------------------------------------------


def test_c05_cardano_correctness(benchmark_constants):
    rng = np.random.default_rng(2718)
    failures = []
    for i in range(200):
        c1 = math.exp(rng.uniform(math.log(1e-3), math.log(0.5)))
        eps = c1 * 10.0 ** rng.uniform(-3.0, -0.5)
        tau = 0.0 if i % 4 == 0 else 10.0 ** rng.uniform(-1.0, 4.0)
        consts = dataclasses.replace(benchmark_constants, c1=c1, tau=tau)
        k_real, k_int = nested_K_cardano(consts, eps)
        terms = (eps**2 * k_real**3, -3 * c1**2 * k_real, -2 * tau * c1**2)
        residual = abs(sum(terms)) / max(abs(t) for t in terms)
        if residual > 1e-9:
            failures.append(f"triple {i}: cubic residual {residual:.2e}")
        lo = K_feasibility_floor(consts, eps, 1, KIND_MLMC)
        ks = np.arange(lo, max(int(10 * k_real), lo + 2), dtype=float)
        objective = consts.sigma1_sq * (tau + ks) / (eps**2 - c1**2 / ks**2)
        if k_int != int(ks[np.argmin(objective)]):
            failures.append(f"triple {i}: integer {k_int} != scan {int(ks[np.argmin(objective)])}")
        if tau == 0.0:
            exact = math.sqrt(3.0) * c1 / eps
            if abs(k_real - exact) > 1e-12 * exact:
                failures.append(f"triple {i}: zero-tau root off by {abs(k_real - exact):.2e}")
    criterion(
        "cardano-closed-form", not failures,
        "(200 random triples)" if not failures else "; ".join(failures[:4]),
    )


# ---------------------------------------------------------------------------
# 6. Extrapolation-weight correctness
# ---------------------------------------------------------------------------


def test_c06_weight_correctness():
    failures = []
    for alpha in (0.5, 1.0, 2.0):
        for R in range(1, 16):
            table = compute_weights(alpha, R)
            base = 2.0 ** (-alpha * np.arange(R))
            for r in range(1, R):
                if abs(float(np.sum(table.w * base**r))) > 1e-8:
                    failures.append(f"alpha={alpha}, R={R}, moment {r}")
            if table.W[0] != 1.0:
                failures.append(f"alpha={alpha}, R={R}: W1 != 1")
    two = compute_weights(1.0, 2)
    direct = np.linalg.solve(np.array([[1.0, 1.0], [1.0, 0.5]]), np.array([1.0, 0.0]))
    if not np.allclose(two.w, direct, rtol=1e-12):
        failures.append("R=2 differs from the direct 2x2 solve")
    if not np.allclose(two.W, [1.0, 2.0], rtol=1e-12):
        failures.append("R=2 cumulative weights != [1, 2]")
    criterion(
        "extrapolation-weights", not failures,
        "(alpha in {0.5,1,2}, R<=15)" if not failures else "; ".join(failures[:4]),
    )


# ---------------------------------------------------------------------------
# 7. Calibration bands (desk pilot)
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_c07_calibration_bands(desk_calibration_report):
    report = desk_calibration_report
    c1_ok = 0.01 <= report.c1.value <= 0.05
    v1a = report.V1_antithetic.value
    v1s = report.V1_standard.value
    v1_ok = 0.01 / 1.6 <= v1a <= 0.01 * 1.6
    ratio = v1s / v1a
    ratio_ok = 1.5 <= ratio <= 2.8
    criterion(
        "calibration-bands", c1_ok and v1_ok and ratio_ok,
        f"(c1={report.c1.value:.4f} in [0.01,0.05]:{c1_ok}, "
        f"V1A={v1a:.4f} in 0.01x[1/1.6,1.6]:{v1_ok}, "
        f"V1S/V1A={ratio:.2f} in [1.5,2.8]:{ratio_ok})",
    )


# ---------------------------------------------------------------------------
# 8. Desk-scale efficiency ordering (statistical)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_benchmark():
    config = bench.config_from_dict(
        {
            "schema_version": 1,
            "budgets": [1e7],
            "replications": 64,
            "seed": 7,
        }
    )
    records = bench.run_benchmark(config)
    return {rec.estimator: rec for rec in records}


def not_significantly_worse(rec_a, rec_b) -> tuple[bool, str]:
    """One-sided 5% test that estimator a's cdf MSE is not above estimator b's.

    Replications are paired by index; identical plans yield identical errors and
    a zero-variance difference, which passes by construction.
    """
    d = rec_a.cdf_errors**2 - rec_b.cdf_errors**2
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return mean <= 0.0, f"mean diff {mean:.3g} (degenerate pairing)"
    se = sd / math.sqrt(len(d))
    return mean <= Z90_ONE_SIDED * se, f"t={mean / se:.2f} vs {Z90_ONE_SIDED:.2f}"


@pytest.mark.slow
def test_c08_desk_efficiency_ordering(desk_benchmark):
    recs = desk_benchmark
    pairs = [
        ("ml2r_table2", "nested"),
        ("ml2r_table2", "ml2r_table1"),
        ("mlmc_table2", "mlmc_table1"),
    ]
    failures = []
    details = []
    for a, b in pairs:
        ok, info = not_significantly_worse(recs[a], recs[b])
        details.append(
            f"{a} rmse={recs[a].rmse_cdf:.3g} vs {b} rmse={recs[b].rmse_cdf:.3g} [{info}]"
        )
        if not ok:
            failures.append(f"{a} significantly worse than {b} ({info})")
    # The simultaneous quantile estimate stays inside its own RMSE band of the
    # closed-form reference at desk scale.
    rec = recs["ml2r_table2"]
    q_bias = abs(rec.quantile_estimate_mean - rec.quantile_ref)
    details.append(f"quantile bias {q_bias:.3g} vs rmse {rec.rmse_quantile:.3g}")
    if q_bias > rec.rmse_quantile:
        failures.append("quantile mean drifted outside its empirical RMSE band")
    criterion("desk-efficiency-ordering", not failures, "; ".join(details))


# ---------------------------------------------------------------------------
# 9. Inline plan identities on every emitted plan
# ---------------------------------------------------------------------------


def test_c09_plan_identities(benchmark_constants):
    worst_ratio = 0.0
    worst_sat = 0.0
    for kind in (KIND_MLMC, KIND_ML2R):
        for exp in (-2.0, -3.0, -4.0):
            for tau in (0.0, 25.0, 100.0):
                eps = 10.0**exp
                consts = dataclasses.replace(benchmark_constants, tau=tau)
                for table, maker in ((1, plan_table1), (2, plan_table2)):
                    plan = maker(consts, eps, kind)
                    lhs = approx_total_cost(plan, tau) / approx_total_cost(plan, 0.0)
                    rhs = 1.0 + tau / (
                        plan.K1 * float(np.sum(plan.q * 2.0 ** np.arange(plan.R)))
                    )
                    worst_ratio = max(worst_ratio, abs(lhs - rhs) / max(1.0, rhs))
                    proxy = mse_proxy(
                        consts, plan.J, plan.q, plan.K, plan.R, kind, plan.level_weights
                    )
                    if table == 2:
                        worst_sat = max(worst_sat, abs(proxy - eps**2) / eps**2)
                    elif proxy > eps**2 * (1 + 1e-12):
                        worst_sat = max(worst_sat, proxy / eps**2 - 1.0)
    ok = worst_ratio <= 1e-12 and worst_sat <= 1e-12
    criterion(
        "plan-identities", ok,
        f"(cost-ratio dev {worst_ratio:.2e}, saturation dev {worst_sat:.2e})",
    )
