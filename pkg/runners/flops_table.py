#!/usr/bin/env python3
from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# ═══════════════════════════════════════════════════════════════════════════════
# Training-FLOPs Table
# ═══════════════════════════════════════════════════════════════════════════════
# Prints the analytic training cost of rank step-down chains against keeping
# the first rank for the whole run.

"""
Usage:
    python lab.py flops --first-rank 8 --second-ranks 8 6 4 2 --knot 3
"""

import argparse

from chain_lora.cola import step_down_schedule, training_flops


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--knot", type=int, default=3, help="Epoch after which the rank steps down.")
    parser.add_argument("--first-rank", type=int, default=8)
    parser.add_argument("--second-ranks", type=int, nargs="+", default=[8, 6, 4, 2])
    parser.add_argument("--dims", type=int, default=64, help="Width of every square layer.")
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--dataset-size", type=int, default=1000)
    parser.add_argument("--batch-size", type=int, default=8)


def main(args: argparse.Namespace) -> int:
    dims = [(args.dims, args.dims, True)] * args.layers
    try:
        reports = [
            (r2, training_flops(step_down_schedule(args.epochs, args.first_rank, r2, args.knot),
                                dims, args.dataset_size, args.batch_size))
            for r2 in args.second_ranks
        ]
    except ValueError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1

    print(f"--- Training FLOPs: {args.layers} layers of {args.dims}x{args.dims}, "
          f"{args.dataset_size} samples, batch {args.batch_size}, knot after epoch {args.knot} ---\n")
    print(f"  {'schedule':<14}{'total':>16}{'saved':>16}")
    for r2, rep in reports:
        saved = "-" if rep.saved_vs_fixed_rank == 0 else f"{rep.saved_vs_fixed_rank:.3e}"
        print(f"  {f'cola({args.first_rank}, {r2})':<14}{rep.total:>16.3e}{saved:>16}")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Tabulate training FLOPs of rank step-down chains.")
    add_arguments(parser)
    sys.exit(main(parser.parse_args()))
