"""Command-line experiment runner.

    akl run --config cfg.json [--output-dir DIR] [--seed N]
    akl gen --kind lowfreq --n 64 --seed 0 --out image.csv

``run`` executes the configured experiment, writes one CSV per table, a
figure per scan, a ``summary.json`` with metrics and pass/fail checks,
and a ``provenance.txt`` echoing the config, its hash, and the seed.
Exit codes: 0 all checks passed, 1 a check failed, 2 usage or config
error.  AKL_THREADS caps the trial worker count.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

from . import __version__
from .config import ExperimentConfig, validate_config
from .errors import InvalidConfigurationError, InvalidInputError, InvalidPartitionError
from .experiments import ExperimentResult, run_experiment
from .serialize import write_csv
from .synthetic import gen_synthetic

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _write_outputs(cfg: ExperimentConfig, results: list[ExperimentResult], output_dir: str) -> dict:
    os.makedirs(output_dir, exist_ok=True)
    prefix_tables = len(results) > 1
    for result in results:
        for table_name, (header, rows) in result.tables.items():
            file_name = (
                f"{result.name}_{table_name}.csv" if prefix_tables or table_name != result.name
                else f"{table_name}.csv"
            )
            write_csv(os.path.join(output_dir, file_name), header, rows)
        for matrix_name, matrix in result.matrices.items():
            from .serialize import write_matrix_csv

            write_matrix_csv(os.path.join(output_dir, f"{result.name}_{matrix_name}.csv"), matrix)

    summary = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "results": {
            result.name: {
                "metrics": result.metrics,
                "checks": result.checks,
                "passed": result.passed,
            }
            for result in results
        },
        "passed": all(result.passed for result in results),
    }
    with open(os.path.join(output_dir, "summary.json"), "w", encoding="ascii") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")

    with open(os.path.join(output_dir, "provenance.txt"), "w", encoding="ascii") as fh:
        fh.write(f"version: {__version__}\n")
        fh.write(f"experiment: {cfg.experiment}\n")
        fh.write(f"seed: {cfg.seed}\n")
        fh.write(f"config_hash: {cfg.config_hash()}\n")
        fh.write(f"config: {cfg.canonical()}\n")
        fh.write(f"timestamp: {datetime.datetime.now().isoformat()}\n")

    from .figures import render_figures

    for result in results:
        render_figures(result, output_dir)
    return summary


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = validate_config(raw)
    except InvalidConfigurationError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        cfg.seed = args.seed
    output_dir = args.output_dir or cfg.output_dir or "akl-out"

    try:
        results = run_experiment(cfg.experiment, cfg.params, cfg.seed)
    except (InvalidInputError, InvalidPartitionError, InvalidConfigurationError) as exc:
        print(f"error: invalid parameter range: {exc}", file=sys.stderr)
        return EXIT_USAGE
    summary = _write_outputs(cfg, results, output_dir)
    for result in results:
        for check, ok in result.checks.items():
            print(f"[{'PASS' if ok else 'FAIL'}] {result.name}: {check}")
    print(f"outputs written to {output_dir}")
    return EXIT_OK if summary["passed"] else EXIT_CHECK_FAILED


def _cmd_gen(args: argparse.Namespace) -> int:
    from .image_io import write_image

    params = {}
    if args.rank is not None:
        params["rank"] = args.rank
    if args.cell is not None:
        params["cell"] = args.cell
    try:
        img = gen_synthetic(args.kind, args.n, args.seed, **params)
        write_image(img, args.out)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {args.kind} image ({args.n}x{args.n}) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="akl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured experiment")
    run_p.add_argument("--config", required=True, help="path to a JSON experiment config")
    run_p.add_argument("--output-dir", default=None, help="artifact directory (default akl-out)")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.set_defaults(fn=_cmd_run)

    gen_p = sub.add_parser("gen", help="generate a synthetic image")
    gen_p.add_argument("--kind", required=True, choices=("lowfreq", "lowrank", "checkerboard"))
    gen_p.add_argument("--n", required=True, type=int, help="image side length")
    gen_p.add_argument("--seed", required=True, type=int)
    gen_p.add_argument("--out", required=True, help="output path (.csv, .pgm, .ppm)")
    gen_p.add_argument("--rank", type=int, default=None, help="rank for the lowrank kind")
    gen_p.add_argument("--cell", type=int, default=None, help="cell size for the checkerboard kind")
    gen_p.set_defaults(fn=_cmd_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
