"""Experiment drivers: RMSE-versus-cost benchmarking and the tau-sensitivity sweep.

Five estimator identities are benchmarked: the plain nested estimator (the
numerically optimized plan with the level count forced to 1), the weighted and
standard multilevel estimators under the numerically optimized parameters, and
both under the closed-form parameters. Replications share random streams across
estimators (common random numbers) so paired comparisons stay sharp; RMSE
confidence intervals use the chi-square interval for a mean of squared errors.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import chi2, norm

from . import alm
from .calibrate import CalibrationReport
from .core import NestedProblem, estimate_cdf_and_quantile
from .errors import ConfigError
from .plans import (
    MlmcPlan,
    StructuralConstants,
    approx_total_cost,
    epsilon_for_budget,
    plan_for_epsilon,
)

SCHEMA_VERSION = 1

# Estimator identities, in the canonical benchmarking order.
ESTIMATORS: dict[str, tuple[str, int, Optional[int]]] = {
    "nested": ("nested", 2, 1),  # numerically optimized with R forced to 1
    "ml2r_table2": ("ml2r", 2, None),
    "mlmc_table2": ("mlmc", 2, None),
    "ml2r_table1": ("ml2r", 1, None),
    "mlmc_table1": ("mlmc", 1, None),
}

BENCHMARK_COLUMNS = [
    "estimator",
    "kind",
    "table",
    "epsilon_target",
    "tau",
    "J",
    "K",
    "R",
    "q",
    "planned_cost",
    "realized_cost",
    "replications",
    "cdf_ref",
    "quantile_ref",
    "cdf_estimate_mean",
    "quantile_estimate_mean",
    "rmse_cdf",
    "rmse_cdf_lo",
    "rmse_cdf_hi",
    "rmse_quantile",
    "rmse_quantile_lo",
    "rmse_quantile_hi",
]

TAU_SWEEP_COLUMNS = [
    "tau",
    "budget",
    "replications",
    "epsilon_table1",
    "J_table1",
    "K_table1",
    "R_table1",
    "planned_cost_table1",
    "realized_cost_table1",
    "mse_cdf_table1",
    "mse_quantile_table1",
    "epsilon_table2",
    "J_table2",
    "K_table2",
    "R_table2",
    "planned_cost_table2",
    "realized_cost_table2",
    "mse_cdf_table2",
    "mse_quantile_table2",
    "efficiency",
    "efficiency_lo",
    "efficiency_hi",
]

_COST_SLACK = 0.05  # realized vs planned cost tolerance (ceiling effects only)


@dataclass
class ExperimentConfig:
    """Validated experiment settings; see ``load_config`` for the file schema."""

    market: alm.MarketParams
    contract: alm.ContractParams
    tau: float
    constants: StructuralConstants
    estimators: list[str]
    epsilons: list[float]
    budgets: Optional[list[float]]
    taus: list[float]
    budget: Optional[float]
    replications: int
    seed: int
    threads: int
    quantile_p: float
    cdf_u: Optional[float]
    K_floor: int
    raw: dict = field(default_factory=dict, repr=False)


def _cfg_get(d: dict, path: str, default=None, required=False):
    node = d
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"{path}: required field missing")
            return default
        node = node[part]
    return node


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed config mapping."""
    version = _cfg_get(raw, "schema_version", default=SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")

    mdict = _cfg_get(raw, "problem.market", default={}) or {}
    cdict = _cfg_get(raw, "problem.contract", default={}) or {}
    try:
        market = replace(alm.default_market(), **mdict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem.market: {exc}") from exc
    try:
        contract = replace(alm.default_contract(), **cdict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem.contract: {exc}") from exc
    tau = float(_cfg_get(raw, "problem.tau", default=0.0))
    if tau < 0:
        raise ConfigError(f"problem.tau: must be >= 0, got {tau}")

    source = _cfg_get(raw, "constants.source", default="literals")
    if source == "literals":
        values = _cfg_get(raw, "constants.values", default={}) or {}
        try:
            constants = StructuralConstants(tau=tau, **{**benchmark_constant_values(), **values})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"constants.values: {exc}") from exc
    elif source == "calibration":
        path = _cfg_get(raw, "constants.path", required=True)
        constants = constants_from_report(CalibrationReport.load(path), tau=tau)
    else:
        raise ConfigError(f"constants.source: must be 'literals' or 'calibration', got {source!r}")

    estimators = list(_cfg_get(raw, "estimators", default=list(ESTIMATORS)))
    for name in estimators:
        if name not in ESTIMATORS:
            raise ConfigError(f"estimators: unknown id {name!r}; known: {sorted(ESTIMATORS)}")

    epsilons = _cfg_get(raw, "epsilons", default=None)
    budgets = _cfg_get(raw, "budgets", default=None)
    if epsilons is not None and budgets is not None:
        raise ConfigError("epsilons / budgets: give one of the two grids, not both")
    if epsilons is not None:
        epsilons = [float(e) for e in epsilons]
        if not epsilons or any(e <= 0 for e in epsilons):
            raise ConfigError("epsilons: must be a non-empty list of positive reals")
    if budgets is not None:
        budgets = [float(b) for b in budgets]
        if not budgets or any(b <= 0 for b in budgets):
            raise ConfigError("budgets: must be a non-empty list of positive reals")

    taus = [float(t) for t in _cfg_get(raw, "taus", default=[tau])]
    if any(t < 0 for t in taus):
        raise ConfigError("taus: entries must be >= 0")
    budget = _cfg_get(raw, "budget", default=None)
    if budget is not None:
        budget = float(budget)
        if budget <= 0:
            raise ConfigError(f"budget: must be > 0, got {budget}")

    replications = int(_cfg_get(raw, "replications", default=64))
    if replications < 2:
        raise ConfigError(f"replications: RMSE needs at least 2, got {replications}")
    seed = int(_cfg_get(raw, "seed", default=0))
    threads = int(_cfg_get(raw, "threads", default=1))
    quantile_p = float(_cfg_get(raw, "quantile_p", default=0.995))
    if not 0 < quantile_p < 1:
        raise ConfigError(f"quantile_p: must be in (0, 1), got {quantile_p}")
    cdf_u = _cfg_get(raw, "cdf_u", default=None)
    K_floor = int(_cfg_get(raw, "K_floor", default=10))

    return ExperimentConfig(
        market=market,
        contract=contract,
        tau=tau,
        constants=constants,
        estimators=estimators,
        epsilons=epsilons if epsilons is not None else [],
        budgets=budgets,
        taus=taus,
        budget=budget,
        replications=replications,
        seed=seed,
        threads=threads,
        quantile_p=quantile_p,
        cdf_u=cdf_u,
        K_floor=K_floor,
        raw=raw,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def benchmark_constant_values() -> dict:
    """Structural constants of the benchmark problem (indicator at the 99.5% point)."""
    return {
        "alpha": 1.0,
        "beta": 0.5,
        "c1": 0.025,
        "growth_a": 2.0,
        "V1": 0.01,
        "sigma1_sq": 0.005,
    }


def constants_from_report(report: CalibrationReport, tau: float) -> StructuralConstants:
    """Planner constants from a calibration report (antithetic variance constant)."""
    growth = report.a_hat if not report.a_default_retained and report.a_hat > 1 else 2.0
    return StructuralConstants(
        alpha=1.0,
        beta=0.5,
        c1=report.c1.value,
        growth_a=growth,
        V1=report.V1_antithetic.value,
        sigma1_sq=report.sigma1_sq,
        tau=tau,
    )


@dataclass
class BenchmarkRecord:
    """One (estimator, precision) row of the benchmark CSV, plus raw errors."""

    estimator: str
    kind: str
    table: int
    epsilon_target: float
    tau: float
    J: float
    K: float
    R: int
    q: list[float]
    planned_cost: float
    realized_cost: float
    replications: int
    cdf_ref: float
    quantile_ref: float
    cdf_estimate_mean: float
    quantile_estimate_mean: float
    rmse_cdf: float
    rmse_cdf_lo: float
    rmse_cdf_hi: float
    rmse_quantile: float
    rmse_quantile_lo: float
    rmse_quantile_hi: float
    cdf_errors: np.ndarray = field(default=None, repr=False)
    quantile_errors: np.ndarray = field(default=None, repr=False)

    def to_row(self) -> dict:
        return {
            col: json.dumps(self.q) if col == "q" else getattr(self, col)
            for col in BENCHMARK_COLUMNS
        }


def mse_chi2_ci(sq_errors: np.ndarray, level: float = 0.95) -> tuple[float, float, float]:
    """Mean squared error with a chi-square CI (M - 1 degrees of freedom)."""
    m = len(sq_errors)
    mse = float(np.mean(sq_errors))
    dof = m - 1
    lo = mse * dof / float(chi2.ppf(0.5 + level / 2.0, dof))
    hi = mse * dof / float(chi2.ppf(0.5 - level / 2.0, dof))
    return mse, lo, hi


def replication_seed(seed: int, rep: int) -> int:
    """Per-replication stream seed; XOR keeps all replications distinct."""
    return seed ^ rep


def _references(config: ExperimentConfig) -> tuple[float, float]:
    """(u, quantile_ref) for the two targets; cdf reference equals quantile_p at u."""
    q_ref = alm.scr_reference(config.market, config.contract, 1.0 - config.quantile_p)
    u = config.cdf_u if config.cdf_u is not None else q_ref
    return u, q_ref


def _cdf_reference(config: ExperimentConfig, u: float, q_ref: float) -> float:
    if config.cdf_u is None or config.cdf_u == q_ref:
        return config.quantile_p
    return alm.cdf_reference(config.market, config.contract, u)


def _run_replications(
    problem: NestedProblem,
    plan: MlmcPlan,
    u: float,
    p: float,
    config: ExperimentConfig,
) -> tuple[np.ndarray, np.ndarray, float]:
    cdf_vals = np.empty(config.replications)
    q_vals = np.empty(config.replications)
    realized = math.nan
    for rep in range(config.replications):
        out = estimate_cdf_and_quantile(
            problem, plan, u, p, replication_seed(config.seed, rep), threads=config.threads
        )
        cdf_vals[rep] = out.cdf_at_u
        q_vals[rep] = out.quantile_at_p
        realized = out.result.consumed_cost
    return cdf_vals, q_vals, realized


def _check_cost(planned: float, realized: float, context: str) -> None:
    if abs(realized - planned) > _COST_SLACK * planned:
        raise RuntimeError(
            f"{context}: realized cost {realized:.6g} deviates from planned "
            f"{planned:.6g} by more than {_COST_SLACK:.0%}"
        )


def run_benchmark(config: ExperimentConfig) -> list[BenchmarkRecord]:
    """Benchmark every configured estimator over the precision grid.

    Both targets (cdf at the reference threshold and the quantile) are
    estimated from the same samples in every replication.
    """
    problem = alm.make_nested_problem(config.market, config.contract, config.tau)
    u, q_ref = _references(config)
    cdf_ref = _cdf_reference(config, u, q_ref)

    grid: list[tuple[float, Optional[float]]]
    if config.budgets is not None:
        grid = [(math.nan, b) for b in config.budgets]
    elif config.epsilons:
        grid = [(e, None) for e in config.epsilons]
    else:
        raise ConfigError("epsilons/budgets: benchmark needs a precision or budget grid")

    records: list[BenchmarkRecord] = []
    for name in config.estimators:
        for eps, budget in grid:
            kind, table, force_R = ESTIMATORS[name]
            if budget is not None:
                eps_used, plan = epsilon_for_budget(
                    config.constants, budget, kind, table,
                    K_floor=config.K_floor, force_R=force_R,
                )
            else:
                eps_used = eps
                plan = plan_for_epsilon(
                    config.constants, eps, kind, table,
                    K_floor=config.K_floor, force_R=force_R,
                )
            planned = approx_total_cost(plan, config.tau)
            cdf_vals, q_vals, realized = _run_replications(
                problem, plan, u, config.quantile_p, config
            )
            _check_cost(planned, realized, f"benchmark[{name}, eps={eps_used:.3g}]")
            cdf_err = cdf_vals - cdf_ref
            q_err = q_vals - q_ref
            mse_c, lo_c, hi_c = mse_chi2_ci(cdf_err**2)
            mse_q, lo_q, hi_q = mse_chi2_ci(q_err**2)
            records.append(
                BenchmarkRecord(
                    estimator=name,
                    kind=kind,
                    table=table,
                    epsilon_target=eps_used,
                    tau=config.tau,
                    J=plan.J,
                    K=plan.K,
                    R=plan.R,
                    q=[float(v) for v in plan.q],
                    planned_cost=planned,
                    realized_cost=realized,
                    replications=config.replications,
                    cdf_ref=cdf_ref,
                    quantile_ref=q_ref,
                    cdf_estimate_mean=float(cdf_vals.mean()),
                    quantile_estimate_mean=float(q_vals.mean()),
                    rmse_cdf=math.sqrt(mse_c),
                    rmse_cdf_lo=math.sqrt(lo_c),
                    rmse_cdf_hi=math.sqrt(hi_c),
                    rmse_quantile=math.sqrt(mse_q),
                    rmse_quantile_lo=math.sqrt(lo_q),
                    rmse_quantile_hi=math.sqrt(hi_q),
                    cdf_errors=cdf_err,
                    quantile_errors=q_err,
                )
            )
    return records


@dataclass
class TauSweepRecord:
    """One tau row: both parametrizations at matched budget, plus their MSE ratio."""

    tau: float
    budget: float
    replications: int
    epsilon_table1: float
    J_table1: float
    K_table1: float
    R_table1: int
    planned_cost_table1: float
    realized_cost_table1: float
    mse_cdf_table1: float
    mse_quantile_table1: float
    epsilon_table2: float
    J_table2: float
    K_table2: float
    R_table2: int
    planned_cost_table2: float
    realized_cost_table2: float
    mse_cdf_table2: float
    mse_quantile_table2: float
    efficiency: float
    efficiency_lo: float
    efficiency_hi: float

    def to_row(self) -> dict:
        return {col: getattr(self, col) for col in TAU_SWEEP_COLUMNS}


def _ratio_ci(
    num_sq: np.ndarray, den_sq: np.ndarray, level: float = 0.90
) -> tuple[float, float, float]:
    """CI for mean(num_sq)/mean(den_sq) via the delta method on logs.

    Replications are paired through common random numbers, so the covariance
    term is kept.
    """
    m = len(num_sq)
    m1, m2 = float(np.mean(num_sq)), float(np.mean(den_sq))
    v1 = float(np.var(num_sq, ddof=1)) / m
    v2 = float(np.var(den_sq, ddof=1)) / m
    cov = float(np.cov(num_sq, den_sq, ddof=1)[0, 1]) / m
    var_log = max(v1 / m1**2 + v2 / m2**2 - 2.0 * cov / (m1 * m2), 0.0)
    half = float(norm.ppf(0.5 + level / 2.0)) * math.sqrt(var_log)
    ratio = m1 / m2
    return ratio, ratio * math.exp(-half), ratio * math.exp(half)


def run_tau_sweep(config: ExperimentConfig) -> list[TauSweepRecord]:
    """Fixed-budget sensitivity study of the weighted estimator in tau.

    For each tau the budget is inverted to a target precision separately for
    the closed-form and the numerically optimized parametrizations; both run
    the same replication count and the efficiency ratio closed-form MSE over
    optimized MSE is reported with a 90% CI.
    """
    if config.budget is None:
        raise ConfigError("budget: tau sweep requires a fixed total budget")
    u, q_ref = _references(config)
    cdf_ref = _cdf_reference(config, u, q_ref)

    records: list[TauSweepRecord] = []
    for tau in config.taus:
        consts = replace(config.constants, tau=tau)
        problem = alm.make_nested_problem(config.market, config.contract, tau)
        eps1, plan1 = epsilon_for_budget(consts, config.budget, "ml2r", 1, K_floor=config.K_floor)
        eps2, plan2 = epsilon_for_budget(consts, config.budget, "ml2r", 2, K_floor=config.K_floor)
        planned1 = approx_total_cost(plan1, tau)
        planned2 = approx_total_cost(plan2, tau)
        cfg_tau = replace(config, tau=tau)
        cdf1, q1, realized1 = _run_replications(problem, plan1, u, config.quantile_p, cfg_tau)
        cdf2, q2, realized2 = _run_replications(problem, plan2, u, config.quantile_p, cfg_tau)
        _check_cost(planned1, realized1, f"tau-sweep[table1, tau={tau}]")
        _check_cost(planned2, realized2, f"tau-sweep[table2, tau={tau}]")
        sq1, sq2 = (cdf1 - cdf_ref) ** 2, (cdf2 - cdf_ref) ** 2
        eff, eff_lo, eff_hi = _ratio_ci(sq1, sq2)
        records.append(
            TauSweepRecord(
                tau=tau,
                budget=config.budget,
                replications=config.replications,
                epsilon_table1=eps1,
                J_table1=plan1.J,
                K_table1=plan1.K,
                R_table1=plan1.R,
                planned_cost_table1=planned1,
                realized_cost_table1=realized1,
                mse_cdf_table1=float(np.mean(sq1)),
                mse_quantile_table1=float(np.mean((q1 - q_ref) ** 2)),
                epsilon_table2=eps2,
                J_table2=plan2.J,
                K_table2=plan2.K,
                R_table2=plan2.R,
                planned_cost_table2=planned2,
                realized_cost_table2=realized2,
                mse_cdf_table2=float(np.mean(sq2)),
                mse_quantile_table2=float(np.mean((q2 - q_ref) ** 2)),
                efficiency=eff,
                efficiency_lo=eff_lo,
                efficiency_hi=eff_hi,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------


def write_csv(path: str, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def write_json(path: str, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w") as fh:
        json.dump([{k: row[k] for k in columns} for row in rows], fh, indent=2)


def read_json_rows(path: str) -> list[dict]:
    with open(path) as fh:
        return json.load(fh)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def write_manifest(out_base: str, raw_config: dict, seed: int, outputs: list[str]) -> str:
    """Record config hash, seed, and versions beside the outputs (no timestamps)."""
    from . import __version__

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool": f"nestmc {__version__}",
        "config_sha256": config_hash(raw_config),
        "seed": seed,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "outputs": [str(o) for o in outputs],
    }
    path = str(Path(out_base).with_suffix(".manifest.json"))
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path
