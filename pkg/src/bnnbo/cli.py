"""``bnnbo`` command line.

    bnnbo run --config PATH [--seed N] [--budget N] [--out DIR]
    bnnbo report DIR
    bnnbo resume PATH/checkpoint.bin

Exit codes: 0 ok, 1 configuration or input error, 2 evaluator failure,
3 internal error.  Log verbosity is read from ``BNNBO_LOG_LEVEL``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import runner
from .config import load_config
from .errors import ChildExit, ConfigError, CorruptCheckpoint, EvaluatorFailure, NoResults, ProtocolError

EXIT_OK, EXIT_CONFIG, EXIT_EVALUATOR, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("bnnbo")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnnbo", description="BNN-based constrained Bayesian optimization")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment over the configured seeds")
    run.add_argument("--config", required=True, help="JSON run configuration")
    run.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    run.add_argument("--budget", type=int, help="override the evaluation budget")
    run.add_argument("--out", help="override output_dir")
    rep = sub.add_parser("report", help="aggregate summary.json files below a directory")
    rep.add_argument("results_dir", help="directory searched recursively for summary.json")
    res = sub.add_parser("resume", help="continue a run from its checkpoint")
    res.add_argument("checkpoint", help="path to a checkpoint.bin")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("BNNBO_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None, on_iteration: runner.IterationHook | None = None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging()
    try:
        if args.command == "run":
            cfg = runner.apply_overrides(load_config(args.config), args.seed, args.budget, args.out)
            runner.run_all(cfg, on_iteration)
        elif args.command == "report":
            print(runner.report(args.results_dir))
        else:
            runner.resume(args.checkpoint, on_iteration)
    except (ConfigError, CorruptCheckpoint, NoResults) as exc:
        print(f"bnnbo: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluatorFailure, ProtocolError, ChildExit) as exc:
        print(f"bnnbo: evaluator failure: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except Exception as exc:
        log.exception("internal error")
        print(f"bnnbo: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
