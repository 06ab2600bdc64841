"""Command-line interface: verbs, artifacts on disk, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from shiftcomp.cli import main

GAUSSIAN_PARAMS = {"n_train": 300, "n_test": 150, "dim": 2, "n_labels": 2}
SPATIAL_PARAMS = {"grid_size": 8, "n_train": 500,
                  "hotspot_centers": [[2.0, 2.0]], "hotspot_strength": 0.7,
                  "n_species": 2, "habitat_fields": 2}
SCN_OVERRIDES = {"epochs": 2, "batch_size": 64, "g_hidden": [8],
                 "d_hidden": [8], "c_hidden": [8], "keep_prob": 1.0}


@pytest.fixture(scope="module")
def gaussian_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gauss")
    code = main(["generate", "--generator", "gaussian_shift",
                 "--params", json.dumps(GAUSSIAN_PARAMS),
                 "--seed", "0", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def spatial_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("spatial")
    code = main(["generate", "--generator", "spatial_bias",
                 "--params", json.dumps(SPATIAL_PARAMS),
                 "--seed", "1", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(gaussian_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    code = main(["train", "--method", "kde",
                 "--train", str(gaussian_dir / "train.csv"),
                 "--test", str(gaussian_dir / "test.csv"),
                 "--val", str(gaussian_dir / "val.csv"),
                 "--seed", "0", "--out", str(out)])
    assert code == 0
    return out / "kde" / "0"


class TestGenerate:
    def test_writes_all_splits(self, gaussian_dir, capsys):
        for name in ("train.csv", "test.csv", "val.csv"):
            assert (gaussian_dir / name).exists()
            assert (gaussian_dir / f"{name}.meta.json").exists()

    def test_reports_row_counts(self, tmp_path, capsys):
        code = main(["generate", "--generator", "gaussian_shift",
                     "--params", json.dumps(GAUSSIAN_PARAMS),
                     "--seed", "3", "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert code == 0
        assert "train_rows: 300" in out
        assert "test_rows: 150" in out

    def test_params_from_file(self, tmp_path):
        params_file = tmp_path / "params.json"
        params_file.write_text(json.dumps(GAUSSIAN_PARAMS))
        code = main(["generate", "--generator", "gaussian_shift",
                     "--params", str(params_file),
                     "--seed", "0", "--out", str(tmp_path / "d")])
        assert code == 0
        assert (tmp_path / "d" / "train.csv").exists()

    def test_unknown_param_exits_2(self, tmp_path, capsys):
        code = main(["generate", "--generator", "gaussian_shift",
                     "--params", json.dumps({"n_trian": 10}),
                     "--seed", "0", "--out", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_kde_artifacts(self, trained_dir, capsys):
        for name in ("report.json", "weights.csv", "predictions.csv",
                     "curves.csv"):
            assert (trained_dir / name).exists()
        report = json.loads((trained_dir / "report.json").read_text())
        assert report["method"] == "kde"
        assert np.isfinite(report["macro_auc"])

    def test_scn_with_config_overrides(self, gaussian_dir, tmp_path, capsys):
        cfg = tmp_path / "scn.json"
        cfg.write_text(json.dumps(SCN_OVERRIDES))
        code = main(["train", "--method", "scn",
                     "--train", str(gaussian_dir / "train.csv"),
                     "--test", str(gaussian_dir / "test.csv"),
                     "--val", str(gaussian_dir / "val.csv"),
                     "--config", str(cfg), "--seed", "5",
                     "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert code == 0
        assert "macro_auc:" in out
        assert (tmp_path / "scn" / "5" / "curves.csv").exists()

    def test_unknown_method_exits_2(self, gaussian_dir, tmp_path, capsys):
        code = main(["train", "--method", "boosting",
                     "--train", str(gaussian_dir / "train.csv"),
                     "--test", str(gaussian_dir / "test.csv"),
                     "--seed", "0", "--out", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code = main(["train", "--method", "kde",
                     "--train", str(tmp_path / "no.csv"),
                     "--test", str(tmp_path / "no2.csv"),
                     "--seed", "0", "--out", str(tmp_path)])
        assert code == 2


class TestEvaluate:
    def test_scores_predictions(self, gaussian_dir, trained_dir, capsys):
        code = main(["evaluate",
                     "--predictions", str(trained_dir / "predictions.csv"),
                     "--data", str(gaussian_dir / "test.csv")])
        out = capsys.readouterr().out
        assert code == 0
        assert "macro_auc:" in out
        assert "labels_scored: 2" in out

    def test_writes_metrics_json(self, gaussian_dir, trained_dir, tmp_path):
        dest = tmp_path / "metrics.json"
        code = main(["evaluate",
                     "--predictions", str(trained_dir / "predictions.csv"),
                     "--data", str(gaussian_dir / "test.csv"),
                     "--out", str(dest)])
        assert code == 0
        metrics = json.loads(dest.read_text())
        assert "macro_auc" in metrics

    def test_row_mismatch_exits_2(self, gaussian_dir, trained_dir, capsys):
        code = main(["evaluate",
                     "--predictions", str(trained_dir / "predictions.csv"),
                     "--data", str(gaussian_dir / "val.csv")])
        assert code == 2
        assert "rows" in capsys.readouterr().err


class TestDiagnose:
    def test_prints_discrepancy_stats(self, gaussian_dir, trained_dir, capsys):
        code = main(["diagnose", "--weights", str(trained_dir / "weights.csv"),
                     "--train", str(gaussian_dir / "train.csv"),
                     "--test", str(gaussian_dir / "test.csv")])
        out = capsys.readouterr().out
        assert code == 0
        assert "discrepancy_uniform:" in out
        assert "effective_sample_size:" in out


class TestGrid:
    def test_writes_four_grids(self, spatial_dir, tmp_path, capsys):
        code = main(["grid", "--data", str(spatial_dir / "train.csv"),
                     "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert code == 0
        for name in ("grid_counts.csv", "grid_weighted.csv",
                     "grid_counts_log2.csv", "grid_weighted_log2.csv"):
            assert (tmp_path / name).exists()
            assert name in out

    def test_non_spatial_data_exits_2(self, gaussian_dir, tmp_path, capsys):
        code = main(["grid", "--data", str(gaussian_dir / "train.csv"),
                     "--out", str(tmp_path)])
        assert code == 2
        assert "spatial" in capsys.readouterr().err


class TestRun:
    def test_full_experiment(self, tmp_path, capsys):
        cfg = {"name": "clirun",
               "dataset": {"generator": "gaussian_shift",
                           "params": GAUSSIAN_PARAMS},
               "methods": ["vanilla", "kde"], "seeds": [1, 2],
               "scn": SCN_OVERRIDES, "pretrain_epochs": 1}
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps(cfg))
        code = main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out")])
        out = capsys.readouterr().out
        assert code == 0
        assert "kde: macro_auc" in out
        assert "vanilla: macro_auc" in out
        assert (tmp_path / "out" / "clirun" / "summary.csv").exists()

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps({
            "name": "bad", "dataset": {"generator": "gaussian_shift"},
            "methods": ["vanilla"], "seeds": [1], "typo": True}))
        code = main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_partial_failure_exits_1(self, gaussian_dir, tmp_path, capsys):
        # strip the oracle sidecars so the oracle method has nothing to use
        data = tmp_path / "data"
        data.mkdir()
        for name in ("train.csv", "test.csv"):
            data.joinpath(name).write_bytes(
                (gaussian_dir / name).read_bytes())
        cfg = {"name": "partial",
               "dataset": {"train": str(data / "train.csv"),
                           "test": str(data / "test.csv")},
               "methods": ["vanilla", "oracle"], "seeds": [1],
               "scn": SCN_OVERRIDES, "pretrain_epochs": 1}
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps(cfg))
        code = main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out")])
        err = capsys.readouterr().err
        assert code == 1
        assert "failures" in err
        root = tmp_path / "out" / "partial"
        assert (root / "vanilla" / "1" / "report.json").exists()
        assert (root / "failures.json").exists()
