#!/usr/bin/env python3
# ═══════════════════════════════════════════════════════════════════════════════
# Chain-of-LoRA Lab Launcher
# ═══════════════════════════════════════════════════════════════════════════════
# One entry point for every runner: each subcommand maps to a module in
# runners/ that defines its own arguments and a main(args) -> exit status.

"""
Chain-of-LoRA lab launcher.

Subcommands:
    run <config>       seed × grid sweep, writes results.csv / results.json / summary.csv
    fw-demo <config>   Frank-Wolfe over a trace-norm ball with the bound check
    flops              training-FLOPs table for rank step-down chains
    selftest           the invariant-marked test suite

Usage Examples:
    python lab.py run example
    python lab.py run configs/classification.yaml --jobs 4 --quiet
    python lab.py fw-demo quadratic_fw
    python lab.py flops --second-ranks 8 6 4 2

Exit status is 0 on success, 1 on a failed run or bad config, 2 on a usage
error.
"""

from __future__ import annotations

import argparse
import importlib
import sys

# ═══════════════════════════════════════════════════════════════════════════════
# Runner Module Configuration
# ═══════════════════════════════════════════════════════════════════════════════

RUNNER_CONFIGS = {
    "run": {"module": "runners.experiment", "description": "run an experiment sweep from a config file"},
    "fw-demo": {"module": "runners.fw_demo", "description": "Frank-Wolfe run and convergence-bound check"},
    "flops": {"module": "runners.flops_table", "description": "training-FLOPs table for rank step-down"},
    "selftest": {"module": "runners.selftest", "description": "run the invariant test suite"},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lab",
        description="Chain-of-LoRA residual low-rank training lab",
        epilog="Examples: lab run example, lab fw-demo quadratic_fw, lab flops",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, spec in RUNNER_CONFIGS.items():
        runner = importlib.import_module(spec["module"])
        child = sub.add_parser(name, help=spec["description"], description=spec["description"])
        runner.add_arguments(child)
        child.set_defaults(runner=runner)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.runner.main(args)


if __name__ == "__main__":
    sys.exit(main())
