"""Command-line figure regeneration: flags mirror the PlotSpec fields."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .render import FIGURE_KINDS, PlotSpec, RenderError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit", description="Regenerate benchmark figures from harness CSVs"
    )
    parser.add_argument("--kind", choices=FIGURE_KINDS, required=True)
    parser.add_argument(
        "--csv", action="append", required=True, help="input CSV (repeatable)"
    )
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--log-x", action="store_true")
    parser.add_argument("--log-y", action="store_true")
    parser.add_argument("--target", choices=["cdf", "quantile"], default="cdf")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(
            kind=args.kind,
            csv_paths=tuple(args.csv),
            out_path=args.out,
            log_x=args.log_x,
            log_y=args.log_y,
            target=args.target,
        )
        path = render(spec)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
