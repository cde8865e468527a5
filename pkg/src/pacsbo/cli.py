"""Command line front end.

Four subcommands: ``train-predictor`` builds and saves the norm predictor,
``run`` executes any experiment scenario from a config file, and
``hoeffding-mc`` / ``synthetic2d`` are the same runner pinned to their
scenario. Output directory and thread count can come from the command line
(highest priority), the environment (PACSBO_OUT, PACSBO_THREADS), or the
config file.

Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, NumericError
from .harness import (
    load_spec,
    load_train_config,
    run_experiment,
    train_predictor_pipeline,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacsbo",
        description="Safe Bayesian optimization experiments with "
                    "data-driven norm bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_out=True):
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override: run this single seed")
        if with_out:
            p.add_argument("--out", default=None,
                           help="override output directory")
            p.add_argument("--threads", type=int, default=None,
                           help="seeds to run in parallel")

    tp = sub.add_parser("train-predictor",
                        help="generate rollout data and fit the predictor")
    tp.add_argument("--config", required=True, help="YAML config file")
    tp.add_argument("--seed", type=int, default=None)
    tp.add_argument("--out", default=None,
                    help="override the predictor output path")

    add_common(sub.add_parser("run", help="run an experiment scenario"))
    add_common(sub.add_parser("hoeffding-mc",
                              help="Monte Carlo width-coverage check"))
    add_common(sub.add_parser("synthetic2d",
                              help="2-D synthetic exploration run"))
    return parser


def _env_override(cli_value, env_name):
    if cli_value is not None:
        return cli_value
    return os.environ.get(env_name)


def _dispatch(args) -> int:
    if args.command == "train-predictor":
        out = _env_override(args.out, "PACSBO_OUT")
        cfg = load_train_config(args.config, out_path=out, seed=args.seed)
        result = train_predictor_pipeline(cfg)
        report = result["report"]
        print(f"wrote {result['path']} ({report['rows']} rows, "
              f"final loss {report['final_loss']:.4g})")
        return 0

    out = _env_override(args.out, "PACSBO_OUT")
    threads = _env_override(args.threads, "PACSBO_THREADS")
    threads = int(threads) if threads is not None else None
    spec = load_spec(args.config, out_dir=out, seed=args.seed,
                     threads=threads)
    expected = {"hoeffding-mc": "hoeffding_mc", "synthetic2d": "synthetic2d"}
    want = expected.get(args.command)
    if want is not None and spec.scenario != want:
        raise ConfigError(f"{args.config}: command {args.command} expects "
                          f"scenario {want}, found {spec.scenario}")
    result = run_experiment(spec)
    if "bound_means" in result:
        for m, bnd in sorted(result["bound_means"].items()):
            thr = result["threshold_means"][m]
            print(f"accepted bound at {m:3d} samples: {bnd:.4g} "
                  f"(draw mean + width {thr:.4g})")
        print(f"per-seed strictly decreasing: {result['decreasing']}")
    elif "coverage" in result:
        for delta, cov in sorted(result["coverage"].items()):
            print(f"coverage at delta={delta:g}: {cov:.4g} "
                  f"(target {1 - delta:.2f})")
    else:
        print(f"wrote {result['csv']}")
    print(f"manifest: {result['manifest']}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
