"""Command-line front end."""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .errors import ArmingtonError

COMMANDS = {
    "ingest": pipeline.cmd_ingest,
    "tariff": pipeline.cmd_tariff,
    "simulate": pipeline.cmd_simulate,
    "estimate-first": pipeline.cmd_estimate_first,
    "estimate-second": pipeline.cmd_estimate_second,
    "report": pipeline.cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="armington",
        description="Two-stage import substitution elasticity pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="path to run config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--meat", choices=["beef", "pork", "chicken"], default=None,
                       help="override config meat selection")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = pipeline.RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.meat is not None:
            cfg.meat = args.meat
        result = COMMANDS[args.command](cfg)
    except ArmingtonError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if isinstance(result, dict):
        for name, path in result.items():
            print(f"{name}: {path}")
    elif isinstance(result, list):
        for path in result:
            print(path)
    else:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
