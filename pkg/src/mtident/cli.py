"""Command-line entry point: ``mtident <subcommand> ...``.

Environment variables ``MTIDENT_OUTPUT_DIR`` and ``MTIDENT_THREADS`` may
stand in for ``--output`` and ``--threads``; explicit flags win, and nothing
else can be set from the environment.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import pipeline
from .datagen import ConfigError, GenConfig, generate_dataset
from .dataset import save_dataset
from .ingest import RealDatasetSpec, load_superconductivity, subsample
from .numerics import SeededRng

log = logging.getLogger("mtident")

SUPERCONDUCT_HELP = (
    "The superconductivity tables (train.csv and unique_m.csv) are distributed by the "
    "UCI Machine Learning Repository as the 'Superconductivty Data' set; download and unzip "
    "them, then point --features at unique_m.csv and --targets at train.csv."
)


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(pipeline.ENV_THREADS)
    return int(env) if env else 1


def _output(args, fallback):
    return args.output or os.environ.get(pipeline.ENV_OUTPUT_DIR) or fallback


def cmd_generate(args) -> int:
    cfg = pipeline.load_config(args.config)
    if cfg.generator is None:
        raise ConfigError("generate needs a config with a generator section")
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    out = Path(_output(args, cfg.output_dir))
    pipeline._prepare_output(out, args.force)
    for s in seeds:
        ds, _, _ = generate_dataset(GenConfig(**{**asdict(cfg.generator), "seed": s}))
        save_dataset(ds, out / f"seed_{s}")
        print(f"wrote {out / f'seed_{s}'} ({ds.n_tasks} tasks)")
    return 0


def cmd_run(args) -> int:
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    out = _output(args, cfg.output_dir)
    row = pipeline.run_experiment(cfg, out, force=args.force, threads=_threads(args))
    for key in ("weak_mcc_mean", "strong_mcc_mean", "indicator_accuracy_mean",
                "pairwise_weak_mean", "pairwise_strong_mean"):
        if row[key] != "":
            print(f"{key}: {float(row[key]):.5f}")
    print(f"artifacts in {out}")
    return 0


def cmd_reproduce(args) -> int:
    out = _output(args, f"reproduce-{args.table}-{args.scale}")
    seeds = [args.seed] if args.seed is not None else None
    _, text = pipeline.reproduce(args.table, args.scale, out, force=args.force, threads=_threads(args), seeds=seeds)
    print(text, end="")
    return 0


def cmd_plotdata(args) -> int:
    text = pipeline.plotdata(args.reports, args.output)
    if args.output is None:
        sys.stdout.write(text)
    return 0


def cmd_ingest(args) -> int:
    sha = None
    if args.sha256_features or args.sha256_targets:
        sha = {"features": args.sha256_features, "targets": args.sha256_targets}
    spec = RealDatasetSpec(args.features, args.targets, standardize=not args.no_standardize, sha256=sha)
    ds = load_superconductivity(spec)
    if args.rows or args.tasks:
        ds = subsample(ds, args.rows or ds.tasks[0].X.shape[0], args.tasks or ds.n_tasks, SeededRng(args.seed or 0))
    out = Path(_output(args, "superconduct"))
    pipeline._prepare_output(out, args.force)
    save_dataset(ds, out)
    print(f"wrote {out} ({ds.tasks[0].X.shape[0]} rows, {ds.n_tasks} tasks)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtident", description="Two-stage identifiable multi-task representation learning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--output", help="output directory (overrides config and MTIDENT_OUTPUT_DIR)")
        sp.add_argument("--force", action="store_true", help="overwrite an existing output directory")

    g = sub.add_parser("generate", help="write synthetic datasets")
    common(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="train both stages and evaluate")
    common(r)
    r.add_argument("--threads", type=int, help="worker processes across seeds")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("reproduce", help="rerun a table's configuration grid")
    rp.add_argument("table", choices=("table1", "table2"))
    rp.add_argument("--scale", choices=("desk", "paper"), default="desk")
    common(rp, config=False)
    rp.add_argument("--threads", type=int, help="worker processes across seeds")
    rp.set_defaults(func=cmd_reproduce)

    pd = sub.add_parser("plotdata", help="convergence curves from reports as long-format CSV")
    pd.add_argument("reports", nargs="*")
    pd.add_argument("--output", help="CSV path (default stdout)")
    pd.set_defaults(func=cmd_plotdata)

    ing = sub.add_parser("ingest-superconduct", help="convert the superconductivity tables", description=SUPERCONDUCT_HELP)
    ing.add_argument("--features", required=True, help="unique_m.csv")
    ing.add_argument("--targets", required=True, help="train.csv")
    ing.add_argument("--no-standardize", action="store_true")
    ing.add_argument("--sha256-features")
    ing.add_argument("--sha256-targets")
    ing.add_argument("--rows", type=int)
    ing.add_argument("--tasks", type=int)
    common(ing, config=False)
    ing.set_defaults(func=cmd_ingest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plotdata" and not args.reports:
        parser.error("plotdata needs at least one report file")
    try:
        return args.func(args)
    except pipeline.OutputExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, FileNotFoundError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
