"""Command-line front end.

Subcommands: calibrate, plan, estimate, benchmark, tau-sweep, alm-reference.
Exit codes: 0 success, 2 config error, 3 infeasible plan, 4 numerical failure.
Every run with an --out destination writes a manifest (config hash, seed,
versions) beside the outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import alm, bench
from .calibrate import calibrate, per_k_csv_rows
from .core import PayoffTransform, estimate, estimate_cdf_and_quantile
from .errors import ConfigError, InfeasiblePlanError, NonFiniteSampleError
from .plans import (
    MlmcPlan,
    approx_total_cost,
    diagnostics_R_lower,
    epsilon_for_budget,
    plan_for_epsilon,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

CALIBRATION_CSV_COLUMNS = ["series", "K", "value", "se", "ci_low", "ci_high", "fit_value"]


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="64-bit stream seed")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument("--out", type=str, default=None, help="output path base")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestmc",
        description="Nested and multilevel Monte Carlo risk estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("alm-reference", help="print the closed-form benchmark references")
    _common_flags(p)
    p.add_argument("--alpha", type=float, default=0.005, help="quantile tail level")
    p.add_argument("--psi-curve-out", type=str, default=None, help="CSV of the loss curve")
    p.add_argument("--density-out", type=str, default=None, help="CSV of exact loss draws")
    p.add_argument("--density-draws", type=int, default=100_000)

    p = sub.add_parser("plan", help="compute estimator parameters for a precision target")
    _common_flags(p)
    p.add_argument("--epsilon", type=float, default=None, help="target RMSE")
    p.add_argument("--budget", type=float, default=None, help="total budget to invert")
    p.add_argument("--tau", type=float, default=None, help="outer/inner cost ratio")
    p.add_argument("--kind", choices=["nested", "mlmc", "ml2r"], default="ml2r")
    p.add_argument("--table", type=int, choices=[1, 2], default=2)
    p.add_argument("--k-floor", type=int, default=10)

    p = sub.add_parser("estimate", help="run one estimation end to end")
    _common_flags(p)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--kind", choices=["nested", "mlmc", "ml2r"], default="ml2r")
    p.add_argument("--table", type=int, choices=[1, 2], default=2)
    p.add_argument("--k-floor", type=int, default=10)
    p.add_argument("--target", choices=["cdf", "quantile", "both"], default="both")
    p.add_argument("--u", type=float, default=None, help="cdf threshold (default: reference quantile)")
    p.add_argument("--p", type=float, default=0.995, help="quantile level")

    p = sub.add_parser("calibrate", help="pilot-estimate the structural constants")
    _common_flags(p)
    p.add_argument("--n-pilot", type=int, default=1_000_000)
    p.add_argument("--k-grid", type=str, default="8,16,32,64,128")
    p.add_argument("--sigma1-correction", action="store_true")

    p = sub.add_parser("benchmark", help="RMSE-versus-cost study of the five estimators")
    _common_flags(p)

    p = sub.add_parser("tau-sweep", help="fixed-budget tau sensitivity study")
    _common_flags(p)

    return parser


def _load_config(args) -> bench.ExperimentConfig:
    if args.config:
        config = bench.load_config(args.config)
    else:
        config = bench.config_from_dict({})
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if getattr(args, "threads", None) is not None:
        config = dataclasses.replace(config, threads=args.threads)
    if getattr(args, "tau", None) is not None:
        config = dataclasses.replace(
            config,
            tau=args.tau,
            constants=dataclasses.replace(config.constants, tau=args.tau),
        )
    return config


def _plan_from_args(config: bench.ExperimentConfig, args) -> tuple[float, MlmcPlan]:
    force_R = 1 if args.kind == "nested" else None
    if (args.epsilon is None) == (args.budget is None):
        raise ConfigError("plan: give exactly one of --epsilon or --budget")
    if args.epsilon is not None:
        plan = plan_for_epsilon(
            config.constants, args.epsilon, args.kind, args.table,
            K_floor=args.k_floor, force_R=force_R,
        )
        return args.epsilon, plan
    return epsilon_for_budget(
        config.constants, args.budget, args.kind, args.table,
        K_floor=args.k_floor, force_R=force_R,
    )


def _plan_payload(config: bench.ExperimentConfig, epsilon: float, plan: MlmcPlan) -> dict:
    kind_for_search = "mlmc" if plan.kind == "nested" else plan.kind
    return {
        "kind": plan.kind,
        "epsilon": epsilon,
        "tau": config.tau,
        "J": plan.J,
        "q": [float(v) for v in plan.q],
        "K": plan.K,
        "R": plan.R,
        "level_weights": [float(v) for v in plan.level_weights],
        "inner_sizes": [int(v) for v in plan.inner_sizes()],
        "outer_counts": [int(v) for v in plan.outer_counts()],
        "planned_cost": approx_total_cost(plan, config.tau),
        # Diagnostic only: the theoretical lower end of the level-count scan.
        "R_lower_diagnostic": diagnostics_R_lower(config.constants, epsilon, kind_for_search),
    }


def _emit(payload, args, default_stem: str, config=None) -> None:
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out = out if out.suffix else out / f"{default_stem}.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        if config is not None:
            bench.write_manifest(str(out), config.raw, config.seed, [str(out)])


def _cmd_alm_reference(args) -> int:
    config = _load_config(args)
    oracles = alm.compute_oracles(config.market, config.contract, args.alpha)
    payload = {
        "z": oracles.z,
        "d": oracles.d,
        "of0": oracles.psi0,
        "x1": oracles.x1,
        "x2": oracles.x2,
        "certificate_ok": oracles.certificate_ok,
        "quantile_level": 1.0 - args.alpha,
        "scr_quantile": oracles.scr_quantile,
    }
    print(json.dumps(payload, indent=2))
    if args.psi_curve_out:
        xs = np.linspace(0.02 * config.market.s0, 4.0 * config.market.s0, 800)
        ys = alm.psi_loss(config.market, config.contract, xs)
        bench.write_csv(
            args.psi_curve_out,
            [{"x": float(a), "psi": float(b)} for a, b in zip(xs, ys)],
            ["x", "psi"],
        )
    if args.density_out:
        rng = np.random.Generator(np.random.Philox(args.seed or 0))
        s1 = alm.sample_outer(config.market, rng, args.density_draws)
        losses = alm.psi_loss(config.market, config.contract, s1)
        bench.write_csv(args.density_out, [{"loss": float(v)} for v in losses], ["loss"])
    return EXIT_OK


def _cmd_plan(args) -> int:
    config = _load_config(args)
    epsilon, plan = _plan_from_args(config, args)
    _emit(_plan_payload(config, epsilon, plan), args, "plan", config)
    return EXIT_OK


def _cmd_estimate(args) -> int:
    config = _load_config(args)
    epsilon, plan = _plan_from_args(config, args)
    problem = alm.make_nested_problem(config.market, config.contract, config.tau)
    u = args.u
    if u is None:
        u = alm.scr_reference(config.market, config.contract, 1.0 - args.p)
    out = estimate_cdf_and_quantile(problem, plan, u, args.p, config.seed, threads=config.threads)
    payload = {
        "plan": _plan_payload(config, epsilon, plan),
        "u": u,
        "p": args.p,
        "consumed_cost": out.result.consumed_cost,
        "seed": config.seed,
        "status": out.status,
        "multiple_crossings": out.multiple_crossings,
    }
    if args.target in ("cdf", "both"):
        payload["cdf_at_u"] = out.cdf_at_u
    if args.target in ("quantile", "both"):
        payload["quantile_at_p"] = out.quantile_at_p
    _emit(payload, args, "estimate", config)
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    config = _load_config(args)
    try:
        grid = [int(tok) for tok in args.k_grid.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--k-grid: expected comma-separated integers ({exc})") from exc
    problem = alm.make_nested_problem(config.market, config.contract, config.tau)
    u = alm.scr_reference(config.market, config.contract, 1.0 - config.quantile_p)
    report = calibrate(
        problem, PayoffTransform.indicator(u), grid, args.n_pilot, config.seed,
        sigma1_correction=args.sigma1_correction,
    )
    print(json.dumps(report.to_dict(), indent=2))
    if args.out:
        base = Path(args.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        report_path = str(base.with_suffix(".json"))
        report.save(report_path)
        csv_path = str(base.with_suffix(".csv"))
        bench.write_csv(csv_path, per_k_csv_rows(report), CALIBRATION_CSV_COLUMNS)
        bench.write_manifest(str(base), config.raw, config.seed, [report_path, csv_path])
    return EXIT_OK


def _write_records(rows: list[dict], columns: list[str], args, config, stem: str) -> None:
    if not args.out:
        if args.format == "csv":
            print(",".join(columns))
            for row in rows:
                print(",".join(str(row[c]) for c in columns))
        else:
            for row in rows:
                print(json.dumps(row))
        return
    base = Path(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = str(base.with_suffix(".csv"))
    json_path = str(base.with_suffix(".json"))
    bench.write_csv(csv_path, rows, columns)
    bench.write_json(json_path, rows, columns)
    bench.write_manifest(str(base), config.raw, config.seed, [csv_path, json_path])
    print(f"wrote {csv_path}, {json_path}")


def _cmd_benchmark(args) -> int:
    config = _load_config(args)
    records = bench.run_benchmark(config)
    _write_records([r.to_row() for r in records], bench.BENCHMARK_COLUMNS, args, config, "benchmark")
    return EXIT_OK


def _cmd_tau_sweep(args) -> int:
    config = _load_config(args)
    records = bench.run_tau_sweep(config)
    _write_records([r.to_row() for r in records], bench.TAU_SWEEP_COLUMNS, args, config, "tau_sweep")
    return EXIT_OK


_COMMANDS = {
    "alm-reference": _cmd_alm_reference,
    "plan": _cmd_plan,
    "estimate": _cmd_estimate,
    "calibrate": _cmd_calibrate,
    "benchmark": _cmd_benchmark,
    "tau-sweep": _cmd_tau_sweep,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasiblePlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NonFiniteSampleError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
