"""Standalone figure-rendering command."""

from __future__ import annotations

import argparse
import sys

from isodose_figures.render import KINDS, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render curve/metrics CSVs from the estimation CLI to images",
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument(
        "--input", required=True, action="append",
        help="input CSV (repeatable to pool several files)",
    )
    parser.add_argument("--out", required=True, help="output image path (PNG)")
    parser.add_argument("--alpha", type=float, default=0.05,
                        help="nominal level for the coverage reference line")
    parser.add_argument("--dpi", type=int, default=150)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(inputs=tuple(args.input), kind=args.kind,
                          output=args.out, alpha=args.alpha, dpi=args.dpi)
        render(spec)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
