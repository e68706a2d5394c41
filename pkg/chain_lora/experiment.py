# ═══════════════════════════════════════════════════════════════════════════════
# Experiment Sweeps
# ═══════════════════════════════════════════════════════════════════════════════
# One config expands into methods × seeds × learning rates × batch sizes runs.
# Each run owns its model, optimizer state and generator; a thread pool works
# through them and results come back in submission order, so the files written
# afterwards do not depend on scheduling.

"""
Seed × grid sweeps over a synthetic task.

The task is generated once from ``cfg.task`` and shared read-only by every
run. A run's generator is seeded with the training seed alone, so the
baseline and the chain see the same adapter initialization and the same
minibatch order for a given seed; with no knots the two traces coincide.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from tqdm import tqdm

from .cola import DivergenceError, RunTrace, inject_adapters, run_cola
from .linalg import make_rng
from .model import loss
from .results import emit_results, select_best, write_trace_csv
from .schema import ExperimentConfig, ResultRow
from .tasks import TaskBundle, generate_task

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunSpec:
    method: str
    seed: int
    lr: float
    batch_size: int

    @property
    def run_id(self) -> str:
        return f"{self.method}-seed{self.seed}-lr{self.lr:g}-bs{self.batch_size}"


def expand_grid(cfg: ExperimentConfig) -> list[RunSpec]:
    return [
        RunSpec(method, seed, lr, bs)
        for method in cfg.methods
        for seed in cfg.seeds
        for lr in cfg.lr_grid
        for bs in cfg.batch_sizes
    ]


def run_single(bundle: TaskBundle, cfg: ExperimentConfig, spec: RunSpec) -> tuple[ResultRow, RunTrace]:
    """Train one grid point; divergence becomes a ``diverged`` row instead of an exception."""
    schedule = cfg.schedule_for(spec.method)
    rng = make_rng(spec.seed)
    model = inject_adapters(
        bundle.model, rng, schedule.rank_per_segment[0], schedule.alpha, schedule.init_std, cfg.adapter_layers
    )
    started = time.perf_counter()
    try:
        trace = run_cola(
            model, bundle.train, schedule, cfg.optimizer, rng,
            lr=spec.lr, batch_size=spec.batch_size, eval_batch=bundle.eval, eval_every=cfg.eval_every,
        )
        eval_value, test_value, status = trace.final_eval, loss(trace.final_model, bundle.test), "ok"
    except DivergenceError as exc:
        logger.warning("run %s diverged: %s", spec.run_id, exc)
        trace, eval_value, test_value, status = exc.trace, math.nan, math.nan, "diverged"
    row = ResultRow(
        task=cfg.task.kind,
        method=spec.method,
        schedule=schedule.descriptor(),
        seed=spec.seed,
        lr=spec.lr,
        batch_size=spec.batch_size,
        eval=eval_value,
        test=test_value,
        flops=trace.flops_total,
        wall_time=round(time.perf_counter() - started, 6),
        status=status,
    )
    return row, trace


def run_grid(
    cfg: ExperimentConfig,
    *,
    progress: bool = False,
    bundle: TaskBundle | None = None,
) -> list[tuple[ResultRow, RunTrace]]:
    """Every grid point of ``cfg``, in grid order."""
    bundle = generate_task(cfg.task) if bundle is None else bundle
    specs = expand_grid(cfg)
    logger.info("running %d grid points with %d worker(s)", len(specs), cfg.jobs)
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = pool.map(lambda s: run_single(bundle, cfg, s), specs)
        return list(tqdm(results, total=len(specs), desc="runs", disable=not progress, leave=False))


def run_experiment(
    cfg: ExperimentConfig,
    *,
    progress: bool = False,
    write: bool = True,
    formats: tuple[str, ...] = ("csv", "json"),
) -> list[ResultRow]:
    """
    Sweep the grid, keep the best-by-eval row per (method, seed) and write
    results, summary and step traces under ``cfg.output_dir``.

    Returns the best rows in (method, seed) order.
    """
    outcomes = run_grid(cfg, progress=progress)
    grid_rows = [row for row, _ in outcomes]
    best = select_best(grid_rows)
    if write:
        out = Path(cfg.output_dir)
        emit_results(best, out, formats, grid_rows=grid_rows, config=cfg)
        for (row, trace), spec in zip(outcomes, expand_grid(cfg)):
            write_trace_csv(trace, out / "traces" / f"{spec.run_id}.csv")
    diverged = sum(row.status == "diverged" for row in grid_rows)
    if diverged:
        logger.warning("%d of %d runs diverged", diverged, len(grid_rows))
    return best
