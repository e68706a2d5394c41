import csv
import dataclasses
import io
import math

import pytest
import yaml

import lab
from chain_lora.experiment import RunSpec, expand_grid, run_experiment, run_grid, run_single
from chain_lora.model import Batch
from chain_lora.schema import ExperimentConfig
from chain_lora.tasks import generate_task

TINY = {
    "task": {"kind": "teacher_student", "dims": 6, "n_layers": 1, "activation": "identity",
             "target_delta_rank": 2, "n_train": 24, "n_eval": 12, "n_test": 12, "seed": 0},
    "methods": ["lora_baseline", "cola"],
    "schedule": {"total_epochs": 2, "knots": [1], "rank_per_segment": [1, 1], "alpha": 2.0},
    "lr_grid": [1.0e-2, 5.0e-3],
    "batch_sizes": [4],
    "seeds": [1, 2],
}


def _tiny(tmp_path, **update):
    return ExperimentConfig.model_validate({**TINY, "output_dir": str(tmp_path), **update})


def _without_wall_time(text):
    rows = list(csv.reader(io.StringIO(text)))
    drop = rows[0].index("wall_time")
    return [row[:drop] + row[drop + 1:] for row in rows]


def test_expand_grid_order_and_size(tmp_path):
    specs = expand_grid(_tiny(tmp_path))
    assert len(specs) == 2 * 2 * 2
    assert specs[0] == RunSpec("lora_baseline", 1, 1e-2, 4)
    assert specs[0].run_id == "lora_baseline-seed1-lr0.01-bs4"


def test_run_experiment_writes_every_file(tmp_path):
    best = run_experiment(_tiny(tmp_path))
    assert len(best) == 4
    assert [(r.method, r.seed) for r in best] == [("lora_baseline", 1), ("lora_baseline", 2), ("cola", 1), ("cola", 2)]
    assert len((tmp_path / "results.csv").read_text().splitlines()) == 5
    assert len((tmp_path / "grid.csv").read_text().splitlines()) == 9
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 5
    assert len(list((tmp_path / "traces").glob("*.csv"))) == 8
    assert (tmp_path / "results.json").is_file()


def test_rows_carry_schedule_and_flops(tmp_path):
    best = run_experiment(_tiny(tmp_path), write=False)
    by_method = {r.method: r for r in best}
    assert by_method["lora_baseline"].schedule == "lora(1)"
    assert by_method["cola"].schedule == "cola(1,1)@[1]e"
    assert by_method["cola"].flops == by_method["lora_baseline"].flops > 0
    assert all(math.isfinite(r.eval) and r.status == "ok" for r in best)


def test_eval_every_fills_the_trace_eval_column(tmp_path):
    run_experiment(_tiny(tmp_path, eval_every=3))
    with (tmp_path / "traces" / "cola-seed1-lr0.01-bs4.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    # 24 samples at batch 4: 12 steps over two epochs
    assert len(rows) == 12
    filled = [int(r["global_step"]) for r in rows if r["eval_loss"]]
    assert filled == [3, 6, 9, 12]
    assert all(math.isfinite(float(r["eval_loss"])) for r in rows if r["eval_loss"])


@pytest.mark.invariant
def test_results_are_byte_identical_apart_from_wall_time(tmp_path):
    run_experiment(_tiny(tmp_path / "a"))
    run_experiment(_tiny(tmp_path / "b", jobs=3))
    for name in ("results.csv", "grid.csv"):
        first = (tmp_path / "a" / name).read_text()
        second = (tmp_path / "b" / name).read_text()
        assert _without_wall_time(first) == _without_wall_time(second)
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_no_knots_makes_chain_equal_baseline(tmp_path):
    cfg = _tiny(tmp_path, schedule={"total_epochs": 2, "knots": [], "rank_per_segment": [1], "alpha": 2.0})
    rows = [row for row, _ in run_grid(cfg)]
    base = [r.eval for r in rows if r.method == "lora_baseline"]
    chain = [r.eval for r in rows if r.method == "cola"]
    assert base == chain


def test_divergence_becomes_a_row(tmp_path):
    cfg = _tiny(tmp_path)
    bundle = generate_task(cfg.task)
    blown = Batch(inputs=bundle.train.inputs * 1e200, targets=bundle.train.targets)
    bundle = dataclasses.replace(bundle, train=blown)
    row, trace = run_single(bundle, cfg, RunSpec("cola", 1, 1e-2, 4))
    assert row.status == "diverged"
    assert math.isnan(row.eval) and math.isnan(row.test)
    assert trace is not None


# ═══ Command line ═══

def _config_file(tmp_path, data):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_lab_run_succeeds(tmp_path, capsys):
    path = _config_file(tmp_path, TINY)
    out = tmp_path / "out"
    assert lab.main(["run", str(path), "--quiet", "--output-dir", str(out), "--seed", "2"]) == 0
    assert "Sweep Complete" in capsys.readouterr().out
    assert len((out / "results.csv").read_text().splitlines()) == 3


def test_lab_run_rejects_malformed_config(tmp_path, capsys):
    path = _config_file(tmp_path, {**TINY, "schedule": {"knots": [1], "rank_per_segment": [1]}})
    assert lab.main(["run", str(path), "--quiet", "--output-dir", str(tmp_path)]) == 1
    assert "Error" in capsys.readouterr().err


def test_lab_fw_demo_passes_bound(tmp_path, capsys):
    path = _config_file(tmp_path, {"objective": "quadratic", "dims": 6, "target_rank": 2, "horizon": 400})
    assert lab.main(["fw-demo", str(path), "--output-dir", str(tmp_path / "fw")]) == 0
    assert "PASS" in capsys.readouterr().out
    lines = (tmp_path / "fw" / "fw_trace.csv").read_text().splitlines()
    assert lines[0] == "t,loss,gap,eta,oracle_residual"
    assert len(lines) == 401


def test_lab_fw_demo_quiet_prints_only_the_verdict(tmp_path, capsys):
    path = _config_file(tmp_path, {"objective": "quadratic", "dims": 6, "target_rank": 2, "horizon": 400})
    assert lab.main(["fw-demo", str(path), "--quiet", "--output-dir", str(tmp_path / "fw")]) == 0
    out = capsys.readouterr().out
    assert "Verdict: PASS" in out
    assert "ball:" not in out and "Trace written" not in out
    assert (tmp_path / "fw" / "fw_trace.csv").is_file()


def test_lab_flops_table(capsys):
    assert lab.main(["flops", "--dims", "8", "--second-ranks", "8", "2"]) == 0
    out = capsys.readouterr().out
    assert "cola(8, 8)" in out and "cola(8, 2)" in out


def test_lab_requires_subcommand():
    with pytest.raises(SystemExit) as exc:
        lab.main([])
    assert exc.value.code == 2
