"""Command line front end: one figure kind per invocation.

    hurdlecast-figures interval_fan --forecast run/forecast.csv \
        --panel run/panel.csv --out fan

Inputs are the pipeline CLI's files. Output is <out>.png and <out>.svg.
Exit codes: 0 success, 2 usage or schema problems.
"""

import argparse
import sys

from .render import FIGURE_KINDS, FigureSpec, render
from .schemas import SchemaError

_INPUT_FLAGS = {
    "interval_fan": ("forecast", "panel"),
    "crps_surface": ("simulation",),
    "country_scatter": ("report",),
    "cluster_map": ("assignment", "hulls", "panel"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hurdlecast-figures",
        description="Render pipeline outputs as PNG and SVG figures.")
    sub = parser.add_subparsers(dest="kind", metavar="kind")
    for kind in FIGURE_KINDS:
        p = sub.add_parser(kind, help=f"render a {kind} figure")
        for flag in _INPUT_FLAGS[kind]:
            p.add_argument(f"--{flag}", required=True, metavar="PATH")
        p.add_argument("--out", required=True, metavar="BASE",
                       help="output path without extension")
        if kind == "interval_fan":
            p.add_argument("--cells", metavar="ID[,ID...]",
                           help="cells to draw (default: busiest four)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.kind is None:
        parser.print_help(sys.stderr)
        return 2

    options = {}
    if getattr(ns, "cells", None):
        try:
            options["cells"] = [int(v) for v in ns.cells.split(",")]
        except ValueError:
            print(f"--cells wants integers, got {ns.cells!r}",
                  file=sys.stderr)
            return 2
    inputs = {flag: getattr(ns, flag) for flag in _INPUT_FLAGS[ns.kind]}
    spec = FigureSpec(kind=ns.kind, inputs=inputs, out_base=ns.out,
                      options=options)
    try:
        written = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
