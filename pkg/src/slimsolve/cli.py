"""Command-line entry point.

Subcommands:

* ``run <config>``                one experiment, CSV metrics + aggregates
* ``sweep <config> --axis NAME``  grid of experiments plus summary CSV
* ``stream <config>``             single-pass streaming run
* ``verify-theory <config>``      evaluate every theory check, CSV report
* ``gen-problem <config>``        write the binary streamed-matrix file

Exit status: 0 on success, 1 when every replicate diverged or a theory
check failed, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys

from slimsolve.config import ConfigError, load_config
from slimsolve import harness


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slim-solve",
        description="Row-action least-squares solver experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("config", help="path to the experiment config file")

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument(
        "--axis",
        choices=("alpha_grid", "r_grid", "method_set"),
        default=None,
        help="sweep axis (defaults to the [sweep] axis in the config)",
    )

    p_stream = sub.add_parser("stream", help="single-pass streaming run")
    p_stream.add_argument("config")

    p_theory = sub.add_parser(
        "verify-theory", help="evaluate the convergence-theory checks"
    )
    p_theory.add_argument("config")

    p_gen = sub.add_parser(
        "gen-problem", help="write the problem in the streamed-matrix format"
    )
    p_gen.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            result = harness.run_experiment(cfg)
            print(f"metrics:   {result.metrics_path}")
            print(f"aggregate: {result.aggregate_path}")
            print(f"replicates: {result.replicates_path}")
            return 1 if result.n_diverged == cfg.replicates else 0
        if args.command == "sweep":
            summary = harness.sweep(cfg, args.axis)
            print(f"summary: {summary}")
            return 0
        if args.command == "stream":
            path = harness.stream_demo(cfg)
            print(f"stream metrics: {path}")
            return 0
        if args.command == "verify-theory":
            path, ok = harness.verify_theory(cfg)
            print(f"report: {path}")
            return 0 if ok else 1
        if args.command == "gen-problem":
            path = harness.gen_problem(cfg)
            print(f"wrote {path}")
            return 0
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
