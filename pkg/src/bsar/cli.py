"""Command-line entry point: ``bsar run ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .dgp import ESTIMATOR_IDS, McCellConfig
from .errors import ConfigError
from .harness import estimator_configs, render_table, run_cell, summarize, write_records

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_FAILED = 3


def _estimator_list(text: str) -> tuple[str, ...]:
    names = tuple(e.strip() for e in text.split(",") if e.strip())
    unknown = [e for e in names if e not in ESTIMATOR_IDS]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"estimators must be a comma list from {','.join(ESTIMATOR_IDS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsar", description="Spatial lag probit Monte Carlo experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one cell of the experiment grid")
    # defaults are None so a config file can fill them; flags win over the file
    run.add_argument("--n", type=int, help="number of units (default thresholds exist for 50 and 500)")
    run.add_argument("--rho", type=float, help="true spatial autocorrelation")
    run.add_argument("--d", type=float, help="distance threshold for neighbours")
    run.add_argument("--reps", type=int, help="number of replications (default 1000)")
    run.add_argument("--estimators", type=_estimator_list, help="comma list, default all five")
    run.add_argument("--seed", type=int, help="master seed (default 0)")
    run.add_argument("--out", help="CSV file for per-replication records")
    run.add_argument("--summary", help="text file for the bias table")
    run.add_argument("--dump-chains", dest="dump_chains", action="store_true", default=None,
                     help="write each Gibbs chain next to the output CSV")
    run.add_argument("--config", help="flat key = value file with run options and hyperparameters")
    run.add_argument("--cell-id", dest="cell_id", type=int, help="cell identifier used in the seed key")
    run.add_argument("--workers", type=int, help="worker processes (default 1)")
    return parser


def _resolve(args) -> tuple[dict, dict]:
    options, hyper = load_config(args.config) if args.config else ({}, {})
    for key in ("n", "rho", "d", "reps", "estimators", "seed", "out", "summary",
                "dump_chains", "cell_id", "workers"):
        value = getattr(args, key)
        if value is not None:
            options[key] = value
    for key in ("n", "rho", "out"):
        if key not in options:
            raise ConfigError(f"missing required option {key!r}")
    return options, hyper


def cmd_run(args) -> int:
    try:
        options, hyper = _resolve(args)
        estimator_configs(hyper)
        config = McCellConfig(
            n=options["n"], rho_true=options["rho"], d=options.get("d"),
            replications=options.get("reps", 1000), master_seed=options.get("seed", 0),
            estimators=options.get("estimators", ESTIMATOR_IDS), hyperparams=hyper,
            cell_id=options.get("cell_id", 0),
        )
    except (ConfigError, ValueError) as exc:
        print(f"bsar: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(options["out"])
    chain_dir = None
    if options.get("dump_chains"):
        chain_dir = out.with_name(out.stem + "_chains")
        chain_dir.mkdir(parents=True, exist_ok=True)
    records = run_cell(config, workers=options.get("workers", 1), chain_dir=chain_dir)
    write_records(records, out)

    summaries = summarize(records, config.rho_true, config.beta_true)
    label = f"rho={config.rho_true:g} n={config.n}"
    text = "".join(
        f"{p} bias\n{render_table({label: summaries}, p)}\n" for p in ("rho", "beta0", "beta1")
    )
    counts = "".join(f"{s.estimator}: {s.n_effective} usable, {s.n_failed} failed\n"
                     for s in summaries.values())
    text += counts
    if options.get("summary"):
        Path(options["summary"]).write_text(text)
    print(text, end="")
    if any(s.n_effective == 0 for s in summaries.values()):
        return EXIT_ALL_FAILED
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
