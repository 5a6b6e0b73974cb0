"""Render the benchmark-harness CSV outputs into the six standard figures.

No statistics are recomputed here: every curve, band, and overlay comes
straight from columns the harness wrote. Rendering is deterministic: fixed
style, fixed dpi, Agg backend, no timestamps, so identical inputs produce
byte-identical image files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = (
    "bias-fit",
    "variance-fit",
    "density",
    "psi-curve",
    "rmse-cost",
    "tau-efficiency",
)

_STYLE = {
    "figure.figsize": (7.0, 4.6),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "svg.hashsalt": "plotkit",
}

_SERIES_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]


class RenderError(ValueError):
    """Input CSV cannot back the requested figure (missing column, no rows)."""


@dataclass(frozen=True)
class PlotSpec:
    """One figure request: inputs, kind, output path, axis scales."""

    kind: str
    csv_paths: tuple[str, ...]
    out_path: str
    log_x: bool = False
    log_y: bool = False
    target: str = "cdf"  # rmse-cost only: which RMSE family to draw

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}; known: {FIGURE_KINDS}")
        if not self.csv_paths:
            raise RenderError("at least one input CSV is required")
        if self.target not in ("cdf", "quantile"):
            raise RenderError(f"target must be 'cdf' or 'quantile', got {self.target!r}")


def read_columns(path: str, required: list[str]) -> dict[str, list[str]]:
    """Load a CSV as column lists, insisting on the named columns and >= 1 row."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise RenderError(f"{path}: empty CSV, nothing to draw")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise RenderError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise RenderError(f"{path}: no data rows")
    return {name: [row[name] for row in rows] for name in reader.fieldnames}


def _floats(cols: dict, name: str) -> np.ndarray:
    return np.asarray([float(v) for v in cols[name]], dtype=float)


def _finish(fig, ax, spec: PlotSpec) -> None:
    if spec.log_x:
        ax.set_xscale("log")
    if spec.log_y:
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(spec.out_path, metadata={"Software": "plotkit"})
    plt.close(fig)


def _draw_bias_fit(spec: PlotSpec, ax) -> None:
    cols = read_columns(
        spec.csv_paths[0], ["series", "K", "value", "ci_low", "ci_high", "fit_value"]
    )
    series = np.asarray(cols["series"])
    overlays = {
        "bias1": ("first-order level bias", lambda c, k: c / (2.0 * k)),
        "bias2": ("second-order combination", lambda c, k: 6.0 * c / (4.0 * k) ** 2),
    }
    drawn = 0
    for idx, (name, (label, proxy)) in enumerate(overlays.items()):
        mask = series == name
        if not mask.any():
            continue
        k = _floats(cols, "K")[mask]
        val = np.abs(_floats(cols, "value")[mask])
        lo = np.abs(_floats(cols, "ci_low")[mask])
        hi = np.abs(_floats(cols, "ci_high")[mask])
        fit = _floats(cols, "fit_value")[mask][0]
        color = _SERIES_COLORS[idx]
        ax.plot(k, val, "o-", color=color, label=f"{label} (empirical)")
        ax.fill_between(k, np.minimum(lo, hi), np.maximum(lo, hi), color=color, alpha=0.2)
        grid = np.geomspace(k.min(), k.max(), 200)
        ax.plot(grid, np.abs(proxy(fit, grid)), "--", color=color,
                label=f"{label} (fit {fit:.3g})")
        drawn += 1
    if drawn == 0:
        raise RenderError(f"{spec.csv_paths[0]}: no bias series rows (bias1/bias2)")
    ax.set_xlabel("inner sample size K")
    ax.set_ylabel("|level-difference mean|")
    ax.legend()


def _draw_variance_fit(spec: PlotSpec, ax) -> None:
    cols = read_columns(spec.csv_paths[0], ["series", "K", "value", "fit_value"])
    series = np.asarray(cols["series"])
    drawn = 0
    for idx, name in enumerate(("var_antithetic", "var_standard")):
        mask = series == name
        if not mask.any():
            continue
        k = _floats(cols, "K")[mask]
        val = _floats(cols, "value")[mask]
        fit = _floats(cols, "fit_value")[mask][0]
        color = _SERIES_COLORS[idx]
        label = name.replace("var_", "").replace("_", " ")
        ax.plot(k, val, "o-", color=color, label=f"{label} (empirical)")
        grid = np.geomspace(k.min(), k.max(), 200)
        ax.plot(grid, fit / np.sqrt(2.0 * grid), "--", color=color,
                label=f"{label} (fit {fit:.3g})")
        drawn += 1
    if drawn == 0:
        raise RenderError(f"{spec.csv_paths[0]}: no variance series rows")
    ax.set_xlabel("inner sample size K")
    ax.set_ylabel("level-difference variance")
    ax.legend()


def _draw_density(spec: PlotSpec, ax) -> None:
    cols = read_columns(spec.csv_paths[0], ["loss"])
    losses = _floats(cols, "loss")
    ax.hist(losses, bins=120, density=True, color=_SERIES_COLORS[0], alpha=0.85)
    ax.set_xlabel("one-year own-fund loss")
    ax.set_ylabel("density")


def _draw_psi_curve(spec: PlotSpec, ax) -> None:
    cols = read_columns(spec.csv_paths[0], ["x", "psi"])
    ax.plot(_floats(cols, "x"), _floats(cols, "psi"), color=_SERIES_COLORS[0])
    ax.set_xlabel("year-1 stock value")
    ax.set_ylabel("loss")


def _draw_rmse_cost(spec: PlotSpec, ax) -> None:
    y = f"rmse_{spec.target}" if spec.target == "cdf" else "rmse_quantile"
    needed = ["estimator", "realized_cost", y, f"{y}_lo", f"{y}_hi"]
    for idx, path in enumerate(spec.csv_paths):
        cols = read_columns(path, needed)
        estimators = np.asarray(cols["estimator"])
        for j, name in enumerate(dict.fromkeys(cols["estimator"])):
            mask = estimators == name
            cost = _floats(cols, "realized_cost")[mask]
            rmse = _floats(cols, y)[mask]
            lo = _floats(cols, f"{y}_lo")[mask]
            hi = _floats(cols, f"{y}_hi")[mask]
            order = np.argsort(cost)
            color = _SERIES_COLORS[(idx * 5 + j) % len(_SERIES_COLORS)]
            ax.plot(cost[order], rmse[order], "o-", color=color, label=name)
            ax.fill_between(cost[order], lo[order], hi[order], color=color, alpha=0.2)
    ax.set_xlabel("computational cost (inner-sample units)")
    ax.set_ylabel(f"empirical RMSE ({spec.target})")
    ax.legend()


def _draw_tau_efficiency(spec: PlotSpec, ax) -> None:
    cols = read_columns(
        spec.csv_paths[0], ["tau", "efficiency", "efficiency_lo", "efficiency_hi"]
    )
    tau = _floats(cols, "tau")
    order = np.argsort(tau)
    eff = _floats(cols, "efficiency")[order]
    lo = _floats(cols, "efficiency_lo")[order]
    hi = _floats(cols, "efficiency_hi")[order]
    ax.plot(tau[order], eff, "o-", color=_SERIES_COLORS[1], label="efficiency")
    ax.fill_between(tau[order], lo, hi, color=_SERIES_COLORS[1], alpha=0.2)
    ax.axhline(1.0, color="gray", linewidth=0.8)
    ax.set_xlabel("outer/inner cost ratio")
    ax.set_ylabel("closed-form MSE / optimized MSE")
    ax.legend()


_DRAWERS = {
    "bias-fit": _draw_bias_fit,
    "variance-fit": _draw_variance_fit,
    "density": _draw_density,
    "psi-curve": _draw_psi_curve,
    "rmse-cost": _draw_rmse_cost,
    "tau-efficiency": _draw_tau_efficiency,
}


def render(spec: PlotSpec) -> str:
    """Write the requested figure; returns the output path.

    Raises RenderError before touching the output file if the input cannot
    back the figure.
    """
    drawer = _DRAWERS[spec.kind]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        try:
            drawer(spec, ax)
        except Exception:
            plt.close(fig)
            raise
        _finish(fig, ax, spec)
    return spec.out_path
