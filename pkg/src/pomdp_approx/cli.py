"""Command-line experiment runner.

    pomdp-approx <subcommand> CONFIG.yaml [--seed S] [--out DIR]
                 [--override key.path=value ...] [--workers K]

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

import argparse
import logging
import sys

from pydantic import ValidationError

from .experiment import PIPELINES, load_config, run
from .model import ModelInconsistencyError
from .window import WindowBudgetError

log = logging.getLogger("pomdp_approx")


def build_parser():
    parser = argparse.ArgumentParser(prog="pomdp-approx", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a dotted config key; VALUE is parsed as YAML")
        p.add_argument("--workers", type=int, default=1, help="threads for parallel stages")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _field_errors(exc: ValidationError):
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        yield f"{where}: {err['msg']}"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed, args.out)
    except ValidationError as exc:
        for line in _field_errors(exc):
            print(f"config error: {line}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return 1
    try:
        arts = run(args.command, cfg, args.workers)
    except WindowBudgetError as exc:
        print(f"window: {exc}", file=sys.stderr)
        return 2
    except (ModelInconsistencyError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, path in arts.items():
        log.info("wrote %s -> %s", name, path)
    print(arts["manifest"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
