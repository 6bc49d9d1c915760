"""CLI for rendering study CSVs: render --kind <k> --in <csv...> --out <png>."""

from __future__ import annotations

import argparse
import sys

from .render import PLOT_KINDS, PlotSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="svloc-render",
        description="Render localization/MAC study CSVs to figures")
    ap.add_argument("--kind", required=True, choices=PLOT_KINDS)
    ap.add_argument("--in", dest="inputs", required=True, nargs="+",
                    help="input CSV path(s)")
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--title", default="")
    ap.add_argument("--xlabel", default="")
    ap.add_argument("--ylabel", default="")
    ap.add_argument("--label", dest="labels", action="append", default=[],
                    help="legend label per input, repeatable")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = PlotSpec(inputs=args.inputs, kind=args.kind, out=args.out,
                    title=args.title, xlabel=args.xlabel, ylabel=args.ylabel,
                    labels=args.labels)
    try:
        render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
