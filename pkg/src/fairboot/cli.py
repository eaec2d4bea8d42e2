"""Command-line interface.

Subcommands: gen-data, train, bootstrap, experiment, asymptotics. Every
command reads an optional key=value config file and applies explicit flags on
top. Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .asymptotics import covariance_report
from .config import SYNTHETIC_DI, SYNTHETIC_DM, TAG_DATA, ConfigError, ExperimentConfig, parse_checkpoints
from .data import save_csv, synthetic_di, synthetic_dm
from .experiments import (
    ensure_outdir,
    prepare_problem,
    run_bootstrap,
    run_experiment,
    run_single,
    write_asymptotics_outputs,
    write_bootstrap_outputs,
    write_experiment_outputs,
    write_json,
    write_train_outputs,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairboot",
        description="Train fairness-aware linear classifiers on data streams and "
        "build bootstrap confidence intervals for their unfairness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--mode", choices=["di", "dm"])
        p.add_argument("--loss", choices=["ce", "squared"])
        p.add_argument("--epsilon", type=float, help="slab tolerance (di mode)")
        p.add_argument("--r2", type=float, help="penalty weight (dm mode)")
        p.add_argument("--penalty", choices=["hard", "smooth"], help="penalty clamp mode")
        p.add_argument("--tau", type=float, help="smooth clamp scale")
        p.add_argument("--step-c", dest="step_c", type=float, help="step size constant")
        p.add_argument("--step-a", dest="step_a", type=float, help="step size decay exponent")
        p.add_argument("--kappa", type=float, help="ridge coefficient")
        p.add_argument("--iters", type=int, help="stream length T")
        p.add_argument("--checkpoints", type=parse_checkpoints, help="comma-separated iterations")
        p.add_argument("--b", type=int, help="bootstrap replicate count")
        p.add_argument("--alpha", type=float, help="interval significance level")
        p.add_argument("--n-constraint", dest="n_constraint", type=int)
        p.add_argument("--n-heldout", dest="n_heldout", type=int)
        p.add_argument("--n-data", dest="n_data", type=int, help="synthetic dataset size")
        p.add_argument("--theory-draws", dest="theory_draws", type=int)
        p.add_argument("--reps", type=int, help="repetition count")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--data", help="synthetic-di, synthetic-dm, or a csv path")
        p.add_argument("--schema", help="csv schema: json file path or inline json")
        p.add_argument("--multiplier", choices=["uniform", "constant"])
        p.add_argument("--out", help="output directory")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as canonical csv")
    add_common(gen)
    gen.add_argument("--n", type=int, help="number of rows to generate")

    for name, help_text in (
        ("train", "single training run"),
        ("bootstrap", "training run with bootstrap confidence intervals"),
        ("experiment", "repetition experiment with distribution comparisons"),
        ("asymptotics", "reference optimum and limit covariance report"),
    ):
        add_common(sub.add_parser(name, help=help_text))
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {
        key: getattr(args, key)
        for key in ExperimentConfig.__dataclass_fields__
        if hasattr(args, key)
    }
    config.apply_overrides(overrides)
    return config


def cmd_gen_data(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    n = args.n if args.n is not None else config.n_data
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if config.data == SYNTHETIC_DI:
        dataset = synthetic_di(n, config.seed_sequence(TAG_DATA))
        metadata = {
            "generator": SYNTHETIC_DI,
            "class_prior_positive": 0.5,
            "rotation_angle": "pi/3",
        }
    elif config.data == SYNTHETIC_DM:
        dataset = synthetic_dm(n, config.seed_sequence(TAG_DATA))
        metadata = {"generator": SYNTHETIC_DM, "cell_distribution": "uniform over (z, y)"}
    else:
        raise ConfigError(f"gen-data requires a synthetic source, got {config.data!r}")
    outdir = ensure_outdir(config)
    csv_path = os.path.join(outdir, "dataset.csv")
    save_csv(dataset, csv_path, comment=f"{metadata['generator']} n={n} seed={config.seed}")
    meta_path = os.path.join(outdir, "metadata.json")
    write_json(
        meta_path,
        {
            **metadata,
            "n": n,
            "seed": config.seed,
            "feature_names": dataset.feature_names,
            "reload_schema": {
                "label_column": "y",
                "sensitive_column": "z",
                "positive_label": "1",
                "categorical_columns": [],
                "add_intercept": False,
            },
        },
        config,
    )
    print(csv_path)
    print(meta_path)


def cmd_train(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    config.validate()
    prep = prepare_problem(config)
    out = run_single(prep)
    for path in write_train_outputs(config, prep, out):
        print(path)


def cmd_bootstrap(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    config.validate(require_bootstrap=True)
    prep = prepare_problem(config)
    out = run_bootstrap(prep)
    for path in write_bootstrap_outputs(config, prep, out):
        print(path)


def cmd_experiment(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    config.validate(require_bootstrap=True, require_reps=True)
    prep = prepare_problem(config)
    out = run_experiment(config, prep)
    for path in write_experiment_outputs(config, out):
        print(path)


def cmd_asymptotics(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    config.validate()
    prep = prepare_problem(config)
    report = covariance_report(prep.spec, prep.problem, prep.pool())
    for path in write_asymptotics_outputs(config, prep, report):
        print(path)


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "bootstrap": cmd_bootstrap,
    "experiment": cmd_experiment,
    "asymptotics": cmd_asymptotics,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
