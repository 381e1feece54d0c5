import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from tacle.cli import main
from tacle.experiment import (
    Ablation,
    ExperimentConfig,
    SweepResult,
    emit_plot_data,
    load_config,
    load_results,
    read_sweep_csv,
    rerun_from_disk,
    run_experiment,
    save_config,
    sweep_threshold,
)
from tacle.stage1 import Stage1Config
from tacle.stage2 import Stage2Config
from tacle.streams import StreamConfig, ingest_embeddings

TINY = ExperimentConfig(
    stream=StreamConfig(num_tasks=3, classes_per_task=2, samples_per_class=60, feature_dim=4, supervision_fraction=0.05),
    stage1=Stage1Config(epochs=2, lr_drop_epoch=1),
    stage2=Stage2Config(epochs=2, samples_per_class_per_epoch=32),
    test_per_class=20,
    seeds=(0,),
)


def test_pipeline_forces_ablation_flags():
    lab = replace(TINY, pipeline="labeled")
    assert lab.pipeline == "labeled_only" and lab.ablation == Ablation(False, False, False)
    fixed = replace(TINY, pipeline="fixed_threshold", ablation=Ablation(True, True, True))
    assert fixed.ablation == Ablation(False, True, True)


def test_invalid_config_rejected_before_compute():
    with pytest.raises(ValueError):
        replace(TINY, pipeline="nope")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"stream": {"num_taskz": 3}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"threshold": {"alpha": 0.5, "beta": 0.95}})


def test_labeled_only_equals_reduced_tacle():
    lab = run_experiment(replace(TINY, pipeline="labeled_only"), persist=False)[0]
    reduced = replace(
        TINY, pipeline="tacle", ablation=Ablation(False, False, False),
        threshold=replace(TINY.threshold, gamma=1.0),
    )
    red = run_experiment(reduced, persist=False)[0]
    assert lab.cumulative_accuracies == red.cumulative_accuracies
    assert lab.acs == red.acs


def test_duplicate_seeds_identical():
    a, b = run_experiment(replace(TINY, seeds=(0, 0)), persist=False)
    assert a.to_json() == b.to_json()


def test_result_shape():
    (r,) = run_experiment(TINY, persist=False)
    assert [rec.task_id for rec in r.records] == [1, 2, 3]
    assert len(r.acs) == len(r.confident_fraction) == len(r.pseudo_label_precision) == 3
    assert 0 <= r.average_incremental_accuracy <= 1
    assert r.records[-1].num_test_samples == 3 * 2 * 20


def test_config_hash_semantics(tmp_path):
    h = TINY.config_hash()
    assert replace(TINY, seeds=(4, 5), output_dir="x").config_hash() == h
    assert replace(TINY, test_per_class=21).config_hash() != h
    assert replace(TINY, stage1=replace(TINY.stage1, augment_noise=0.3)).config_hash() != h
    # key order and whitespace in the file do not matter
    d = TINY.to_dict()
    p = tmp_path / "c.json"
    p.write_text(json.dumps(dict(reversed(list(d.items()))), indent=7))
    assert load_config(p).config_hash() == h


def test_partial_config_gets_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"stream": {"num_tasks": 2}, "stage1": {"sgd": {"learning_rate": 0.01}}}')
    cfg = load_config(p)
    assert cfg.stream.num_tasks == 2 and cfg.stream.classes_per_task == 4
    assert cfg.stage1.sgd.learning_rate == 0.01 and cfg.stage1.sgd.momentum == 0.9
    out = tmp_path / "full.json"
    save_config(cfg, out)
    full = json.loads(out.read_text())
    assert full["stage2"]["epochs"] == 5 and full["threshold"]["beta"] == 0.65
    assert load_config(out) == cfg


def test_persist_and_rerun_byte_identical(tmp_path):
    cfg = replace(TINY, seeds=(0, 3), output_dir=str(tmp_path))
    results = run_experiment(cfg)
    loaded = load_results(tmp_path)
    assert [r.seed for r in loaded] == [0, 3]
    assert [r.cumulative_accuracies for r in loaded] == [r.cumulative_accuracies for r in results]
    stored, fresh = rerun_from_disk(tmp_path, cfg.config_hash(), 3)
    assert stored == fresh
    assert not list(tmp_path.glob("*.tmp"))


def test_sweep_grid_shape(tmp_path):
    out = tmp_path / "sweep.csv"
    sweep = sweep_threshold(TINY, [0.45, 0.5], [0.6, 0.65, 0.7], out)
    assert sweep.grid.shape == (2, 3)
    assert np.all((sweep.grid >= 0) & (sweep.grid <= 1))
    back = read_sweep_csv(out)
    assert back.alphas == [0.45, 0.5] and back.betas == [0.6, 0.65, 0.7]
    np.testing.assert_array_equal(back.grid, sweep.grid)


def test_sweep_single_cell_matches_run():
    sweep = sweep_threshold(TINY, [0.5], [0.65])
    runs = run_experiment(TINY, persist=False)
    assert sweep.grid[0, 0] == np.mean([r.average_incremental_accuracy for r in runs])


def test_plot_data_curves(tmp_path):
    single = run_experiment(TINY, persist=False)
    p = emit_plot_data(single, "cumulative_curve", tmp_path / "c.csv")
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["task", "mean", "stddev"]
    assert len(rows) == 1 + 3
    assert all(float(r[2]) == 0.0 for r in rows[1:])
    for r, acc in zip(rows[1:], single[0].cumulative_accuracies):
        assert abs(float(r[1]) - acc) < 1e-9

    multi = run_experiment(replace(TINY, seeds=(0, 1)), persist=False)
    rows = list(csv.reader(emit_plot_data(multi, "acs_curve", tmp_path / "a.csv").open()))
    acs = np.array([r.acs for r in multi])
    np.testing.assert_allclose([float(r[1]) for r in rows[1:]], acs.mean(0), atol=1e-9)
    np.testing.assert_allclose([float(r[2]) for r in rows[1:]], acs.std(0), atol=1e-9)


def test_plot_data_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_plot_data([], "cumulative_curve", tmp_path / "x.csv")
    with pytest.raises(ValueError):
        emit_plot_data(SweepResult([0.5], [0.6], np.zeros((1, 1))), "bogus", tmp_path / "x.csv")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_plot_data(SweepResult([0.5], [0.6], np.zeros((1, 1))), "sweep_grid", blocker / "x.csv")


def test_stage_functions_see_one_task_at_a_time(monkeypatch):
    import tacle.experiment as ex

    seen = []
    real = ex.train_task_stage1

    def spy(model, task, *args, **kwargs):
        seen.append(task.task_id)
        # the stream has already given up every task handed out so far
        assert all(c in task.class_set for c in task.labeled_y)
        return real(model, task, *args, **kwargs)

    monkeypatch.setattr(ex, "train_task_stage1", spy)
    run_experiment(TINY, persist=False)
    assert seen == [1, 2, 3]


# ------------------------------------------------------------------------ CLI


def write_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    d = TINY.to_dict()
    p.write_text(json.dumps(d))
    return p


def test_cli_run_and_plot(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--pipeline", "labeled", "--seeds", "0,1", "--out", str(out)]) == 0
    assert "labeled_only" in capsys.readouterr().out
    assert len(list(out.glob("*_seed?.json"))) == 2
    assert main(["plot-data", "--results", str(out), "--kind", "acs_curve"]) == 0
    rows = list(csv.reader((out / "acs_curve.csv").open()))
    assert rows[0] == ["task", "mean", "stddev"] and len(rows) == 4


def test_cli_sweep_and_plot(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", str(cfg), "--alphas", "0.5", "--betas", "0.6,0.7", "--out", str(out)]) == 0
    assert read_sweep_csv(out).grid.shape == (1, 2)
    assert main(["plot-data", "--results", str(out), "--kind", "sweep_grid", "--out", str(tmp_path / "g.csv")]) == 0
    assert (tmp_path / "g.csv").read_text() == out.read_text()


def test_cli_gen_stream(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "stream.csv"
    assert main(["gen-stream", "--config", str(cfg), "--out", str(out)]) == 0
    stream = ingest_embeddings(out)
    assert len(stream) == 3 and stream.feature_dim == 4


def test_cli_reports_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"pipeline": "magic"}')
    assert main(["run", "--config", str(p)]) == 1
    assert "unknown pipeline" in capsys.readouterr().err
