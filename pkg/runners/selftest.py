#!/usr/bin/env python3
from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# ═══════════════════════════════════════════════════════════════════════════════
# Invariant Self-Test
# ═══════════════════════════════════════════════════════════════════════════════
# Runs the invariant-marked part of the test suite through pytest.main.

import argparse
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent.parent / "tests"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--include-slow", action="store_true", help="Also run the long experiment checks.")


def main(args: argparse.Namespace) -> int:
    marker = "invariant" if args.include_slow else "invariant and not slow"
    print(f"--- Running invariant suite ({marker}) ---\n")
    return int(pytest.main(["-q", "-m", marker, str(TESTS_DIR)]))


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the invariant test suite.")
    add_arguments(parser)
    sys.exit(main(parser.parse_args()))
