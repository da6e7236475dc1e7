"""Command line: plot --kind K --in CSV --out IMG [--exponent E]."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render figures from tracerlab CSV outputs."
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="csv_path", required=True, help="input CSV")
    parser.add_argument("--out", dest="out_path", required=True, help="output image")
    parser.add_argument(
        "--exponent",
        type=float,
        default=None,
        help="compensation exponent (compensated kind; default: fitted slope)",
    )
    args = parser.parse_args(argv)
    try:
        render(FigureSpec(args.kind, args.csv_path, args.out_path, args.exponent))
    except SchemaError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
