"""End-to-end runs of the small configuration through the library and the CLI."""
import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from seizcoh.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from seizcoh.pipeline import ConfigError, Pipeline, PipelineConfig, numeric_view
from seizcoh.recording import write_recording
from seizcoh.synth import generate

MINI = Path(__file__).resolve().parents[1] / "configs" / "mini.yaml"

STAGE_FILES = [
    "config.yaml",
    "data/recording/meta.json",
    "data/recording/data.bin",
    "data/ground_truth.json",
    "label/manifest.csv",
    "features/blocks.npz",
    "train/method1/chosen.json",
    "evaluate/auc.json",
    "coherence/coherence.json",
    "report/predictions.csv",
    "report/onsets.csv",
    "report/transfer_curves.csv",
    "report/predictions.png",
    "report/transfer.png",
]


def _mini_dict(**over):
    d = yaml.safe_load(MINI.read_text())
    d.update(over)
    return d


def _write_cfg(path, d):
    path.write_text(yaml.safe_dump(d))
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini") / "run"
    rc = main(["run", "--config", str(MINI), "--out", str(out)])
    assert rc == EXIT_OK
    return out, json.loads((out / "report.json").read_text())


def test_every_stage_writes_its_artifacts(mini_run):
    out, _ = mini_run
    missing = [f for f in STAGE_FILES if not (out / f).is_file()]
    assert not missing
    assert (out / "report.json").is_file()


def test_report_shape(mini_run):
    _, rep = mini_run
    assert {"config", "stage_keys", "manifest", "chosen_combo", "auc", "coherence", "transfer", "files",
            "timings", "cache_hits"} <= set(rep)
    assert set(rep["auc"]) == {"method1", "method2"}
    for a in rep["auc"].values():
        assert 0.0 <= a["auc"] <= 1.0
    coh = rep["coherence"]
    p = rep["config"]["eval"]["permutations"]
    assert coh["N"] == p * (p + 1) // 2
    assert len(rep["transfer"]) == 2
    assert not any(rep["cache_hits"].values())


def test_config_copied_verbatim_when_not_overridden(tmp_path):
    out = tmp_path / "fresh" / "nested"
    d = _mini_dict(out=str(out))
    cfg_path = _write_cfg(tmp_path / "c.yaml", d)
    assert main(["run", "--config", str(cfg_path), "--stage", "label"]) == EXIT_OK
    assert (out / "config.yaml").read_text() == cfg_path.read_text()


def test_config_records_overrides(mini_run):
    out, _ = mini_run
    saved = yaml.safe_load((out / "config.yaml").read_text())
    assert saved["out"] == str(out)
    assert PipelineConfig.from_dict(saved).method1.ensemble_size == 2


def test_prediction_rows_match_test_clips(mini_run):
    out, rep = mini_run
    rows = _read_csv(out / "report" / "predictions.csv")
    assert list(rows[0]) == ["time_s", "label", "method1_mean", "method1_sd", "method2_mean", "method2_sd"]
    assert len(rows) == sum(rep["manifest"]["test"].values())
    t = [float(r["time_s"]) for r in rows]
    assert t == sorted(t)
    for r in rows:
        assert 0.0 <= float(r["method1_mean"]) <= 1.0
        assert float(r["method2_sd"]) >= 0.0


def test_onsets_csv_matches_recording(mini_run):
    out, _ = mini_run
    onsets = [float(r["onset_s"]) for r in _read_csv(out / "report" / "onsets.csv")]
    assert onsets == yaml.safe_load(MINI.read_text())["synth"]["seizure_onsets"]


def test_transfer_csv_rows_per_grid_point(mini_run):
    out, rep = mini_run
    rows = _read_csv(out / "report" / "transfer_curves.csv")
    n_grid = len(rep["transfer"][0]["thresholds"])
    by_series = {}
    for r in rows:
        by_series.setdefault(r["series"], []).append(r)
    assert set(by_series) == {"filtered", "filtered control", "reverse-filtered", "reverse-filtered control"}
    assert all(len(v) == n_grid for v in by_series.values())
    m = sum(rep["manifest"]["test"].values())
    full = [r for r in by_series["filtered"] if float(r["e_th"]) == 1.0]
    assert int(full[0]["retained"]) == m


def test_changing_eval_params_reuses_training(mini_run, tmp_path):
    src, _ = mini_run
    out = tmp_path / "copy"
    shutil.copytree(src, out)
    d = _mini_dict(out=str(out))
    d["eval"]["grid_step"] = 0.25
    rc = main(["run", "--config", str(_write_cfg(tmp_path / "c.yaml", d))])
    assert rc == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    hits = rep["cache_hits"]
    for stage in ("data", "label", "features", "train/method1", "train/method2", "evaluate", "coherence"):
        assert hits[stage], stage
    assert hits["transfer"] is False
    assert len(rep["transfer"][0]["thresholds"]) == 5


def test_rerun_is_deterministic(mini_run, tmp_path):
    _, first = mini_run
    out = tmp_path / "again"
    assert main(["run", "--config", str(MINI), "--out", str(out)]) == EXIT_OK
    second = json.loads((out / "report.json").read_text())
    assert numeric_view(second) == numeric_view(first)
    a = (mini_run[0] / "report" / "predictions.csv").read_bytes()
    assert (out / "report" / "predictions.csv").read_bytes() == a


def test_ingest_path_matches_synth_path(mini_run, tmp_path):
    out_synth, rep_synth = mini_run
    cfg = PipelineConfig.from_dict(_mini_dict())
    rec, _ = generate(cfg.synth_config())
    write_recording(rec, tmp_path / "rec")
    d = _mini_dict(out=str(tmp_path / "ing"), recording=str(tmp_path / "rec"))
    d.pop("scenario")
    d.pop("synth")
    rep = Pipeline(PipelineConfig.from_dict(d)).run("evaluate")
    assert (tmp_path / "ing" / "data" / "source.json").is_file()
    got = json.loads((rep / "auc.json").read_text())
    assert got == rep_synth["auc"]


def test_subcommand_stops_at_stage(tmp_path):
    out = tmp_path / "o"
    assert main(["features", "--config", str(MINI), "--out", str(out)]) == EXIT_OK
    assert (out / "features" / "blocks.npz").is_file()
    assert not (out / "train").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    p = _write_cfg(tmp_path / "bad.yaml", _mini_dict(bogus_key=1))
    assert main(["run", "--config", str(p)]) == EXIT_USAGE
    assert "bogus_key" in capsys.readouterr().err
    p = _write_cfg(tmp_path / "bad2.yaml", _mini_dict(scenario="nope"))
    assert main(["run", "--config", str(p)]) == EXIT_USAGE


def test_missing_config_file_exit_code(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == EXIT_USAGE


def test_unknown_subcommand_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_missing_recording_exit_code(tmp_path, capsys):
    d = _mini_dict(out=str(tmp_path / "o"), recording=str(tmp_path / "nowhere"))
    d.pop("scenario")
    p = _write_cfg(tmp_path / "c.yaml", d)
    assert main(["run", "--config", str(p)]) == EXIT_DATA
    assert "ingest" in capsys.readouterr().err


def test_unwritable_output_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", str(MINI), "--out", str(blocker / "sub")]) == EXIT_DATA


def test_scenario_and_recording_are_exclusive():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"scenario": "separable", "recording": "x"}).validate()


def test_stage_artifacts_are_finite(mini_run):
    out, _ = mini_run
    z = np.load(out / "features" / "blocks.npz")
    for k in z.files:
        if z[k].dtype.kind == "f":
            assert np.isfinite(z[k]).all(), k
