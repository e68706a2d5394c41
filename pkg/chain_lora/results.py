# ═══════════════════════════════════════════════════════════════════════════════
# Result Files
# ═══════════════════════════════════════════════════════════════════════════════
# Everything a run leaves on disk: the best-by-eval rows, the raw grid, the
# seed summaries, per-run step traces, Frank-Wolfe traces and model snapshots.
# Files are written in a fixed row order with fixed float formatting so the
# same config produces the same bytes (wall_time aside).

"""
Serializers for experiment output.

``results.csv`` has the fixed header ``task,method,schedule,seed,eval,test,
flops,wall_time``; ``results.json`` carries the same rows, the raw grid and an
echo of the validated config. ``summary.csv`` reports mean and sample standard
deviation over seeds under both readings of "best of a grid search":

``best_per_seed``
    pick the best grid point for each seed, then average over seeds.
``best_of_mean``
    average each grid point over seeds, then pick the best average.

Lower eval loss is better; diverged runs never count as best.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import orjson
from pydantic import BaseModel

from . import lora
from .cola import RunTrace, mean_std
from .frankwolfe import FwTrace
from .model import Layer, LoraLinearModel
from .schema import ResultRow

logger = logging.getLogger(__name__)

RESULT_HEADER = ["task", "method", "schedule", "seed", "eval", "test", "flops", "wall_time"]
GRID_HEADER = [*RESULT_HEADER[:4], "lr", "batch_size", *RESULT_HEADER[4:], "status"]
SUMMARY_HEADER = [
    "task", "method", "schedule", "aggregation", "n_seeds",
    "eval_mean", "eval_std", "test_mean", "test_std", "lr", "batch_size",
]
FW_TRACE_HEADER = ["t", "loss", "gap", "eta", "oracle_residual"]


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return "" if value is None else str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in header])
    return path


# ═══════════════════════════════════════════════════════════════════════════════
# Selection and Summaries
# ═══════════════════════════════════════════════════════════════════════════════

def _ok(rows: Iterable[ResultRow]) -> list[ResultRow]:
    return [r for r in rows if r.status == "ok" and math.isfinite(r.eval)]


def _group_key(r: ResultRow) -> tuple[str, str, str]:
    return (r.task, r.method, r.schedule)


def select_best(grid_rows: Sequence[ResultRow]) -> list[ResultRow]:
    """Best-by-eval row per (task, method, schedule, seed); test values are never looked at."""
    best: dict[tuple, ResultRow] = {}
    order: list[tuple] = []
    for r in grid_rows:
        key = (*_group_key(r), r.seed)
        if key not in best:
            order.append(key)
            best[key] = r
            continue
        current = best[key]
        if current.status != "ok" or (r.status == "ok" and r.eval < current.eval):
            best[key] = r
    return [best[key] for key in order]


def summarize(grid_rows: Sequence[ResultRow]) -> list[dict[str, Any]]:
    groups: dict[tuple, list[ResultRow]] = defaultdict(list)
    for r in grid_rows:
        groups[_group_key(r)].append(r)

    out = []
    for key, rows in groups.items():
        task, method, schedule = key
        ok = _ok(rows)
        if not ok:
            logger.warning("no successful runs for %s / %s; summary row skipped", method, schedule)
            continue

        per_seed = _ok(select_best(ok))
        ev_mean, ev_std = mean_std([r.eval for r in per_seed])
        te_mean, te_std = mean_std([r.test for r in per_seed])
        out.append({
            "task": task, "method": method, "schedule": schedule, "aggregation": "best_per_seed",
            "n_seeds": len(per_seed), "eval_mean": ev_mean, "eval_std": ev_std,
            "test_mean": te_mean, "test_std": te_std, "lr": None, "batch_size": None,
        })

        points: dict[tuple[float, int], list[ResultRow]] = defaultdict(list)
        for r in ok:
            points[(r.lr, r.batch_size)].append(r)
        (lr, bs), chosen = min(points.items(), key=lambda item: mean_std([r.eval for r in item[1]])[0])
        ev_mean, ev_std = mean_std([r.eval for r in chosen])
        te_mean, te_std = mean_std([r.test for r in chosen])
        out.append({
            "task": task, "method": method, "schedule": schedule, "aggregation": "best_of_mean",
            "n_seeds": len(chosen), "eval_mean": ev_mean, "eval_std": ev_std,
            "test_mean": te_mean, "test_std": te_std, "lr": lr, "batch_size": bs,
        })
    return out


# ═══════════════════════════════════════════════════════════════════════════════
# Emitters
# ═══════════════════════════════════════════════════════════════════════════════

def emit_results(
    rows: Sequence[ResultRow],
    output_dir: str | Path,
    formats: Sequence[str] = ("csv", "json"),
    *,
    grid_rows: Sequence[ResultRow] | None = None,
    config: BaseModel | None = None,
) -> list[Path]:
    """
    Write ``rows`` (the best-by-eval rows) plus the summary; return the paths.

    ``grid_rows`` defaults to ``rows``. Summaries are always computed from the
    grid so that both aggregations see every grid point.

    Raises:
        ValueError: ``rows`` is empty or an unknown format is requested.
        OSError: ``output_dir`` cannot be written.
    """
    if not rows:
        raise ValueError("emit_results needs at least one row")
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown result formats {sorted(unknown)}")
    grid = list(rows if grid_rows is None else grid_rows)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if "csv" in formats:
        written.append(_write_csv(out / "results.csv", RESULT_HEADER, (r.model_dump() for r in rows)))
        written.append(_write_csv(out / "grid.csv", GRID_HEADER, (r.model_dump() for r in grid)))
    written.append(_write_csv(out / "summary.csv", SUMMARY_HEADER, summarize(grid)))
    if "json" in formats:
        doc = {
            "config": None if config is None else config.model_dump(mode="json"),
            "rows": [r.model_dump() for r in rows],
            "grid": [r.model_dump() for r in grid],
        }
        path = out / "results.json"
        path.write_bytes(orjson.dumps(doc, option=orjson.OPT_INDENT_2))
        written.append(path)
    logger.info("wrote %d result files to %s", len(written), out)
    return written


def load_results_json(path: str | Path) -> dict[str, Any]:
    return orjson.loads(Path(path).read_bytes())


def write_trace_csv(trace: RunTrace, path: str | Path) -> Path:
    header = ["global_step", "epoch", "segment", "lr", "train_loss", "eval_loss"]
    return _write_csv(Path(path), header, trace.to_rows())


def write_fw_trace(trace: FwTrace, path: str | Path) -> Path:
    return _write_csv(Path(path), FW_TRACE_HEADER, trace.to_rows())


# ═══════════════════════════════════════════════════════════════════════════════
# Model Snapshots
# ═══════════════════════════════════════════════════════════════════════════════
# Adapters are stored flat as {d, k, rank, alpha, a, b}; floats go through
# orjson's shortest round-trip representation, so a snapshot reloads exactly.

def _adapter_record(ad: lora.LoraAdapter) -> dict[str, Any]:
    return {"d": ad.d, "k": ad.k, "rank": ad.rank, "alpha": ad.alpha, "a": ad.a.tolist(), "b": ad.b.tolist()}


def snapshot_model(model: LoraLinearModel) -> dict[str, Any]:
    return {
        "loss_kind": model.loss_kind,
        "layers": [
            {
                "weight": layer.weight.tolist(),
                "activation": layer.activation,
                "consumed": layer.consumed,
                "adapter": None if layer.adapter is None else _adapter_record(layer.adapter),
            }
            for layer in model.layers
        ],
    }


def load_model_snapshot(doc: dict[str, Any]) -> LoraLinearModel:
    layers = []
    for i, rec in enumerate(doc["layers"]):
        ad = rec.get("adapter")
        adapter = None
        if ad is not None:
            adapter = lora.adapter_from_factors(np.asarray(ad["b"]), np.asarray(ad["a"]), ad["alpha"])
            if (adapter.d, adapter.k, adapter.rank) != (ad["d"], ad["k"], ad["rank"]):
                raise ValueError(f"layer {i}: adapter record disagrees with its factor shapes")
        layers.append(Layer(
            weight=np.asarray(rec["weight"], dtype=np.float64),
            adapter=adapter,
            activation=rec["activation"],
            consumed=bool(rec.get("consumed", False)),
        ))
    return LoraLinearModel(tuple(layers), loss_kind=doc["loss_kind"])


def save_model_snapshot(model: LoraLinearModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(snapshot_model(model)))
    return path


def read_model_snapshot(path: str | Path) -> LoraLinearModel:
    return load_model_snapshot(orjson.loads(Path(path).read_bytes()))
