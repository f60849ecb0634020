"""Command line entry: mvlab-plots <run_dir> [--format svg|png] [--out DIR]."""

from __future__ import annotations

import argparse
import sys
import warnings

from .render import MalformedCsvError, ReportSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mvlab-plots",
                                     description="render figures from an mvlab run directory")
    parser.add_argument("run_dir")
    parser.add_argument("--format", choices=("svg", "png"), default="svg")
    parser.add_argument("--out", default=None,
                        help="figure directory (default: <run_dir>/figures)")
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            produced = render(ReportSpec(args.run_dir, args.out, args.format))
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except MalformedCsvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in produced:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
