#!/usr/bin/env python3
from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# ═══════════════════════════════════════════════════════════════════════════════
# Experiment Sweep Runner
# ═══════════════════════════════════════════════════════════════════════════════
# Loads a config, sweeps seeds × learning rates × batch sizes for every method,
# writes the result files and prints the best rows and per-method means.

"""
Run an experiment config end to end.

Usage:
    python runners/experiment.py configs/example.yaml --jobs 4
    python lab.py run example --seed 3 --output-dir /tmp/out
"""

import argparse

from chain_lora.cola import mean_std
from chain_lora.config_loader import ConfigError, load_config
from chain_lora.experiment import run_experiment
from runners.common import add_common_arguments, banner, setup_logging


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="Config name under configs/ or a path to a YAML file.")
    parser.add_argument(
        "--format", dest="formats", action="append", choices=("csv", "json"), default=None,
        help="Result format (repeatable; default csv and json).",
    )
    add_common_arguments(parser)


def main(args: argparse.Namespace) -> int:
    setup_logging(args)
    try:
        cfg = load_config(
            args.config,
            output_dir=args.output_dir,
            jobs=args.jobs,
            seeds=None if args.seed is None else [args.seed],
        )
    except ConfigError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1

    banner(f"Running {cfg.task.kind} sweep: {', '.join(cfg.methods)}")
    print(f"  schedule:   {cfg.schedule.descriptor()} over {cfg.schedule.total_epochs} epochs")
    print(f"  grid:       lr {cfg.lr_grid} x batch {cfg.batch_sizes}")
    print(f"  seeds:      {cfg.seeds}\n")

    try:
        rows = run_experiment(cfg, progress=not args.quiet, formats=tuple(args.formats or ("csv", "json")))
    except OSError as exc:
        print(f"Error: cannot write results: {exc}", file=sys.stderr)
        return 1

    print("Best rows (by eval loss):")
    for r in rows:
        flag = "" if r.status == "ok" else "  [diverged]"
        print(f"  - {r.method:<14} seed {r.seed}: eval {r.eval:.6g}  test {r.test:.6g}  (lr {r.lr:g}, bs {r.batch_size}){flag}")

    print("\nMean eval loss over seeds:")
    for method in cfg.methods:
        values = [r.eval for r in rows if r.method == method and r.status == "ok"]
        if values:
            mean, std = mean_std(values)
            print(f"  - {method:<14} {mean:.6g} ± {std:.2g}")
        else:
            print(f"  - {method:<14} every run diverged")
    print(f"\nResults written to {cfg.output_dir}")
    print("\n--- Sweep Complete ---")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run a chain-of-LoRA experiment sweep.")
    add_arguments(parser)
    sys.exit(main(parser.parse_args()))
