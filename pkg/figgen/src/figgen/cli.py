"""figgen command line: render figures from spec files.

Exit codes follow the harness convention: 0 success, 2 usage error
(malformed arguments or spec), 1 runtime failure (unreadable or malformed
input data, unwritable output).
"""

import argparse
import sys

from .errors import DataError, FigureError, SpecError
from .render import render
from .spec import load_spec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figgen",
        description="Render figures from harness CSV results.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="render one figure spec file")
    p_render.add_argument("spec", nargs="+",
                          help="figure spec file(s), one figure each")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        for path in args.spec:
            out = render(load_spec(path))
            print(f"wrote {out}")
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FigureError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
