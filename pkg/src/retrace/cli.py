"""Command-line entry point.

    retrace-exp run <config> [--out DIR] [--jobs N] [--seed-offset N]
    retrace-exp verify <config> [...]
    retrace-exp scores <input-csv> <output-csv>

Exit codes: 0 success, 1 a cell failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, RetraceError
from .experiments import EXIT_CELL_FAILED, EXIT_CONFIG, EXIT_OK, run_experiment, run_scores


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retrace-exp", description="Run return-based off-policy experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run the experiment a config declares"),
        ("verify", "run the analysis battery on a config's grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--jobs", type=_positive, default=None, help="worker processes (default: all cores)")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every declared seed")
    p = sub.add_parser("scores", help="normalise a game,algorithm,score table")
    p.add_argument("input")
    p.add_argument("output")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    if args.command == "scores":
        try:
            degenerate = run_scores(args.input, args.output)
        except (RetraceError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CELL_FAILED
        if degenerate:
            print(f"zero-spread games scored 1 for every algorithm: {', '.join(degenerate)}", file=sys.stderr)
        return EXIT_OK
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error in {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "verify":
        config = config.with_mode("verify")
    return run_experiment(config, args.out, args.jobs, args.seed_offset)


if __name__ == "__main__":
    sys.exit(main())
