# ═══════════════════════════════════════════════════════════════════════════════
# Shared Runner Plumbing
# ═══════════════════════════════════════════════════════════════════════════════
# Flags every subcommand accepts, logging setup, and the console banner style.

from __future__ import annotations

import argparse
import logging
import os

from dotenv import load_dotenv

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def add_common_arguments(parser: argparse.ArgumentParser, *, jobs: bool = True) -> None:
    parser.add_argument("--seed", type=int, default=None, help="Run a single seed instead of the configured list.")
    parser.add_argument("--output-dir", default=None, help="Directory for result files (overrides the config).")
    if jobs:
        parser.add_argument("--jobs", type=int, default=None, help="Worker threads for the grid.")
    parser.add_argument("--quiet", action="store_true", help="No progress bar.")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=None, help="Overrides COLA_LOG_LEVEL.")


def setup_logging(args: argparse.Namespace) -> None:
    """Load ``.env`` and configure the root logger (flag, then env, then WARNING)."""
    load_dotenv()
    level = getattr(args, "log_level", None) or os.environ.get("COLA_LOG_LEVEL", "WARNING")
    logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s")


def banner(title: str) -> None:
    print(f"--- {title} ---\n")
