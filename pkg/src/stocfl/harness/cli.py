"""Command-line entry point: ``stocfl run|gradcheck|cluster-only``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import ConfigError, parse_config
from .experiment import run_cluster_only, run_experiment
from .gradcheck import DEFAULT_STEP, gradcheck_suite, tolerance_for

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK_FAILED = 4


def _load(args):
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    return cfg


def _cmd_run(args) -> int:
    result = run_experiment(_load(args), args.out)
    print(result.summary_line())
    return EXIT_OK


def _cmd_cluster_only(args) -> int:
    result = run_cluster_only(_load(args), args.out)
    print(result.summary_line())
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    worst, _ = gradcheck_suite(args.step, break_gradient=args.break_gradient)
    bound = tolerance_for(args.step)
    ok = worst < bound
    print(f"gradcheck step={args.step:g} max_rel_err={worst:.3e} bound={bound:.0e} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stocfl", description="Stochastic clustered federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write CSV outputs")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("cluster-only", help="client clustering without training")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_cluster_only)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--break-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "gradcheck" and not args.step > 0:
        print("error: --step must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
