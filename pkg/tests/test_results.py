import csv
import io
import math

import numpy as np
import pytest

from chain_lora.results import (
    RESULT_HEADER,
    emit_results,
    load_model_snapshot,
    load_results_json,
    read_model_snapshot,
    save_model_snapshot,
    select_best,
    snapshot_model,
    summarize,
)
from chain_lora.schema import ExperimentConfig, ResultRow
from tests.conftest import random_model


def _row(seed, lr, ev, te=None, method="cola", status="ok"):
    return ResultRow(
        task="teacher_student", method=method, schedule="cola(2,2)@[1]e", seed=seed, lr=lr, batch_size=4,
        eval=ev, test=ev if te is None else te, flops=1.0e6, wall_time=0.5, status=status,
    )


GRID = [_row(1, 1e-2, 1.0, 1.1), _row(1, 5e-3, 2.0, 0.1), _row(2, 1e-2, 3.0, 3.1), _row(2, 5e-3, 1.5, 1.6)]


def test_results_csv_header_and_single_row(tmp_path):
    emit_results([_row(1, 1e-2, 0.25)], tmp_path, formats=("csv",))
    text = (tmp_path / "results.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "task,method,schedule,seed,eval,test,flops,wall_time"
    assert len(lines) == 2
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == RESULT_HEADER
    assert rows[0]["schedule"] == "cola(2,2)@[1]e"
    assert float(rows[0]["eval"]) == 0.25


def test_select_best_ignores_test_values():
    best = select_best(GRID)
    assert [(r.seed, r.lr) for r in best] == [(1, 1e-2), (2, 5e-3)]


def test_select_best_prefers_ok_over_diverged():
    grid = [_row(1, 1e-2, math.nan, status="diverged"), _row(1, 5e-3, 9.0)]
    assert select_best(grid)[0].status == "ok"
    only_bad = select_best([_row(1, 1e-2, math.nan, status="diverged")])
    assert only_bad[0].status == "diverged"


def test_summary_matches_hand_computation():
    by_agg = {s["aggregation"]: s for s in summarize(GRID)}
    per_seed = by_agg["best_per_seed"]
    assert per_seed["n_seeds"] == 2
    assert per_seed["eval_mean"] == pytest.approx(1.25)
    assert per_seed["eval_std"] == pytest.approx(math.sqrt(0.125))
    assert per_seed["test_mean"] == pytest.approx(1.35)

    of_mean = by_agg["best_of_mean"]
    assert of_mean["lr"] == 5e-3 and of_mean["batch_size"] == 4
    assert of_mean["eval_mean"] == pytest.approx(1.75)
    assert of_mean["test_mean"] == pytest.approx(0.85)


def test_summary_skips_groups_without_successful_runs():
    assert summarize([_row(1, 1e-2, math.nan, status="diverged")]) == []


def test_json_echoes_config(tmp_path):
    cfg = ExperimentConfig(seeds=[3], lr_grid=[1e-3])
    emit_results([_row(3, 1e-3, 0.5)], tmp_path, config=cfg)
    doc = load_results_json(tmp_path / "results.json")
    assert ExperimentConfig.model_validate(doc["config"]) == cfg
    assert doc["rows"][0]["eval"] == 0.5
    assert len(doc["grid"]) == 1


def test_summary_written_with_grid(tmp_path):
    emit_results(select_best(GRID), tmp_path, grid_rows=GRID)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert len(lines) == 3
    assert len((tmp_path / "grid.csv").read_text().splitlines()) == 5


def test_emit_rejects_empty_and_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_results([], tmp_path)
    with pytest.raises(ValueError, match="unknown"):
        emit_results([_row(1, 1e-2, 0.1)], tmp_path, formats=("parquet",))


def test_nan_written_as_nan(tmp_path):
    emit_results([_row(1, 1e-2, math.nan, status="diverged")], tmp_path, formats=("csv",))
    assert ",nan,nan," in (tmp_path / "results.csv").read_text()


def test_model_snapshot_reloads_exactly(rng, tmp_path):
    model = random_model(rng)
    path = save_model_snapshot(model, tmp_path / "snap" / "model.json")
    again = read_model_snapshot(path)
    assert again.loss_kind == model.loss_kind
    for a, b in zip(model.layers, again.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.adapter.a, b.adapter.a)
        np.testing.assert_array_equal(a.adapter.b, b.adapter.b)
        assert a.adapter.alpha == b.adapter.alpha
        assert a.activation == b.activation


def test_snapshot_record_must_match_factors(rng):
    doc = snapshot_model(random_model(rng))
    doc["layers"][0]["adapter"]["rank"] = 7
    with pytest.raises(ValueError, match="layer 0"):
        load_model_snapshot(doc)
