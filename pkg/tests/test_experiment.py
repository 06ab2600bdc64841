"""Experiment driver: config schema, artifacts, determinism, diagnostics."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from shiftcomp.errors import ConfigError, ShapeError
from shiftcomp.experiment import (ExperimentConfig, diagnose_weights,
                                  emit_weight_grid, generate_data, load_config,
                                  read_curves_csv, read_grid_csv,
                                  read_predictions_csv, read_weights_csv,
                                  run_experiment, run_single, summarize,
                                  write_curves_csv, write_predictions_csv,
                                  write_weights_csv)
from shiftcomp.rng import STREAM_DATA, make_rng
from shiftcomp.shift import ShiftWeights
from shiftcomp.synthdata import (Dataset, gen_spatial_bias, save_dataset,
                                 true_shift_factor)

TINY_GAUSSIAN = {"generator": "gaussian_shift",
                 "params": {"n_train": 300, "n_test": 150, "dim": 2,
                            "n_labels": 2}}
TINY_SCN = {"epochs": 2, "batch_size": 64, "g_hidden": [8], "d_hidden": [8],
            "c_hidden": [8], "keep_prob": 1.0}


def tiny_config(**overrides):
    kwargs = dict(name="tiny", dataset=TINY_GAUSSIAN,
                  methods=["vanilla", "scn"], seeds=[1, 2], scn=TINY_SCN,
                  pretrain_epochs=1)
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


class TestExperimentConfig:
    def test_valid_config_builds(self):
        cfg = tiny_config()
        assert cfg.methods == ("vanilla", "scn")
        assert cfg.scn_config(7).seed == 7
        assert cfg.scn_config(7, "d_only").resolved()[1] == 0.0

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            ExperimentConfig.from_dict({
                "name": "x", "dataset": TINY_GAUSSIAN, "methods": ["vanilla"],
                "seeds": [1], "typo_key": 1})

    def test_unknown_scn_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            tiny_config(scn={"learning_rate": 0.1})

    def test_unknown_generator_param_rejected(self):
        bad = {"generator": "gaussian_shift", "params": {"n_trian": 10}}
        with pytest.raises(ConfigError, match="unknown keys"):
            tiny_config(dataset=bad)

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError, match="unknown method"):
            tiny_config(methods=["vanilla", "scnn"])

    def test_duplicate_seeds_rejected(self):
        with pytest.raises(ConfigError, match="distinct"):
            tiny_config(seeds=[1, 1])

    def test_missing_dataset_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            tiny_config(dataset={"train": str(tmp_path / "absent.csv"),
                                 "test": str(tmp_path / "absent2.csv")})

    def test_data_seed_pins_dataset_across_run_seeds(self):
        spec = dict(TINY_GAUSSIAN, data_seed=9)
        train_a, _, _ = generate_data(spec, 1)
        train_b, _, _ = generate_data(spec, 2)
        np.testing.assert_array_equal(train_a.features, train_b.features)
        train_c, _, _ = generate_data(TINY_GAUSSIAN, 1)
        train_d, _, _ = generate_data(TINY_GAUSSIAN, 2)
        assert not np.array_equal(train_c.features, train_d.features)

    def test_load_config_round_trip(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({
            "name": "roundtrip", "dataset": TINY_GAUSSIAN,
            "methods": ["kde"], "seeds": [3], "scn": TINY_SCN}))
        cfg = load_config(path)
        assert cfg.name == "roundtrip"
        assert cfg.methods == ("kde",)


class TestArtifactFiles:
    def test_weights_round_trip_full_precision(self, tmp_path):
        rng = make_rng(1, STREAM_DATA)
        w = ShiftWeights(np.exp(rng.normal(size=57)), "kde")
        path = tmp_path / "weights.csv"
        write_weights_csv(path, w)
        np.testing.assert_array_equal(read_weights_csv(path), w.values)

    def test_predictions_round_trip_full_precision(self, tmp_path):
        rng = make_rng(2, STREAM_DATA)
        probs = rng.random((40, 3))
        path = tmp_path / "preds.csv"
        write_predictions_csv(path, probs)
        np.testing.assert_array_equal(read_predictions_csv(path), probs)

    def test_curves_round_trip_with_missing_val(self, tmp_path):
        curves = {"loss_d": [0.1, 0.2], "loss_fsmm": [1.0, 2.0],
                  "loss_c": [3.0, 0.5], "val_auc": [None, 0.75]}
        path = tmp_path / "curves.csv"
        write_curves_csv(path, curves)
        assert read_curves_csv(path) == curves

    def test_wrong_headers_rejected(self, tmp_path):
        path = tmp_path / "weights.csv"
        path.write_text("not_w\n1.0\n")
        with pytest.raises(ShapeError):
            read_weights_csv(path)
        path = tmp_path / "preds.csv"
        path.write_text("a,b\n0.1,0.2\n")
        with pytest.raises(ShapeError):
            read_predictions_csv(path)


class TestRunSingle:
    def test_vanilla_report_contents(self):
        cfg = tiny_config()
        train, test, val = generate_data(cfg.dataset, 1)
        _, report, weights, probs = run_single("vanilla", 1, train, test, val, cfg)
        assert report["method"] == "vanilla"
        assert report["weight_source"] == "uniform"
        assert 0.0 <= report["macro_auc"] <= 1.0
        assert probs.shape == (test.n, 2)
        assert weights.values.shape == (train.n,)
        # uniform weights leave the diagnostic untouched
        assert report["discrepancy_weighted"] == report["discrepancy_uniform"]
        assert report["effective_sample_size"] == train.n

    def test_oracle_method_uses_true_ratio(self):
        cfg = tiny_config()
        train, test, val = generate_data(cfg.dataset, 2)
        _, report, weights, _ = run_single("oracle", 2, train, test, val, cfg)
        np.testing.assert_allclose(
            weights.values, true_shift_factor(train.oracle, train.features))
        assert report["weight_source"] == "oracle"

    def test_oracle_method_requires_oracle(self):
        cfg = tiny_config()
        train, test, val = generate_data(cfg.dataset, 1)
        bare = Dataset(train.features, train.labels, "train", oracle=None)
        with pytest.raises(ConfigError, match="oracle"):
            run_single("oracle", 1, bare, test, val, cfg)

    def test_kde_on_spatial_uses_coordinates_only(self):
        rng = make_rng(9, STREAM_DATA)
        train, test, val, _ = gen_spatial_bias(8, 900, [[2.0, 2.0]], 0.5, 2,
                                               habitat_fields=16, rng=rng)
        assert train.dim == 18  # far past the density-estimation guard
        cfg = tiny_config()
        _, report, weights, _ = run_single("kde", 1, train, test, val, cfg)
        assert report["weight_source"] == "kde"
        assert np.all(np.isfinite(weights.values))

    def test_unknown_method_rejected(self):
        cfg = tiny_config()
        train, test, val = generate_data(cfg.dataset, 1)
        with pytest.raises(ConfigError):
            run_single("boosting", 1, train, test, val, cfg)


class TestRunExperiment:
    def test_artifacts_and_summary(self, tmp_path):
        cfg = tiny_config()
        code = run_experiment(cfg, tmp_path)
        assert code == 0
        root = tmp_path / "tiny"
        for method in cfg.methods:
            for seed in cfg.seeds:
                run_dir = root / method / str(seed)
                for name in ("report.json", "curves.csv", "weights.csv",
                             "predictions.csv"):
                    assert (run_dir / name).exists()
        assert (root / "summary.json").exists()
        assert (root / "data" / "1" / "train.csv").exists()
        assert not (root / "failures.json").exists()

    def test_summary_recomputable_from_run_files(self, tmp_path):
        cfg = tiny_config()
        run_experiment(cfg, tmp_path)
        root = tmp_path / "tiny"
        summary = json.loads((root / "summary.json").read_text())
        reports = []
        for method in cfg.methods:
            for seed in cfg.seeds:
                with open(root / method / str(seed) / "report.json") as fh:
                    reports.append(json.load(fh))
        recomputed = summarize(reports)
        for method, entry in summary.items():
            for key, value in entry.items():
                if key in ("seeds", "n_runs"):
                    assert recomputed[method][key] == value
                else:
                    assert abs(recomputed[method][key] - value) < 1e-12

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = tiny_config()
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        sa = (tmp_path / "a" / "tiny" / "summary.csv").read_bytes()
        sb = (tmp_path / "b" / "tiny" / "summary.csv").read_bytes()
        assert sa == sb

    def test_parallel_matches_serial(self, tmp_path):
        cfg = tiny_config()
        run_experiment(cfg, tmp_path / "serial", threads=1)
        run_experiment(cfg, tmp_path / "parallel", threads=2)
        sa = (tmp_path / "serial" / "tiny" / "summary.csv").read_bytes()
        sb = (tmp_path / "parallel" / "tiny" / "summary.csv").read_bytes()
        assert sa == sb

    def test_failed_run_preserves_partials_and_manifests(self, tmp_path):
        rng = make_rng(3, STREAM_DATA)
        feats = rng.normal(size=(80, 2))
        labels = (rng.random((80, 2)) < 0.5).astype(float)
        train = Dataset(feats, labels, "train")  # no oracle on purpose
        test = Dataset(rng.normal(size=(40, 2)) + 1.0,
                       (rng.random((40, 2)) < 0.5).astype(float), "test")
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        save_dataset(train, data_dir / "train.csv")
        save_dataset(test, data_dir / "test.csv")
        cfg = tiny_config(dataset={"train": str(data_dir / "train.csv"),
                                   "test": str(data_dir / "test.csv")},
                          methods=["vanilla", "oracle"], seeds=[1])
        code = run_experiment(cfg, tmp_path)
        assert code == 1
        root = tmp_path / "tiny"
        assert (root / "vanilla" / "1" / "report.json").exists()
        failures = json.loads((root / "failures.json").read_text())
        assert failures[0]["method"] == "oracle"
        assert "ConfigError" in failures[0]["error"]


@pytest.fixture(scope="module")
def spatial_fixture():
    rng = make_rng(21, STREAM_DATA)
    train, test, val, oracle = gen_spatial_bias(
        8, 4000, [[2.0, 2.0], [6.0, 5.0]], 0.7, 2, habitat_fields=4, rng=rng)
    return train, test, val, oracle


class TestWeightGrid:
    def test_uniform_weights_match_raw_counts(self, spatial_fixture, tmp_path):
        train = spatial_fixture[0]
        paths = emit_weight_grid(np.ones(train.n), train, tmp_path)
        raw = read_grid_csv(paths["grid_counts.csv"])
        weighted = read_grid_csv(paths["grid_weighted.csv"])
        np.testing.assert_array_equal(raw, weighted)
        assert raw.shape == (8, 8)
        assert raw.sum() == train.n

    def test_oracle_weights_flatten_the_grid(self, spatial_fixture, tmp_path):
        train = spatial_fixture[0]
        w = true_shift_factor(train.oracle, train.features)
        paths = emit_weight_grid(w, train, tmp_path)
        raw = read_grid_csv(paths["grid_counts.csv"])
        weighted = read_grid_csv(paths["grid_weighted.csv"])

        def cv(grid):
            return grid.std() / grid.mean()

        assert cv(weighted) < cv(raw)

    def test_log2_binning(self, spatial_fixture, tmp_path):
        train = spatial_fixture[0]
        paths = emit_weight_grid(np.ones(train.n), train, tmp_path)
        raw = read_grid_csv(paths["grid_counts.csv"])
        binned = read_grid_csv(paths["grid_counts_log2.csv"])
        edges = 2.0 ** np.arange(0, 9)
        np.testing.assert_array_equal(binned, np.digitize(raw, edges))
        assert binned.max() <= 9

    def test_empty_cells_write_zeros(self, tmp_path):
        rng = make_rng(4, STREAM_DATA)
        train, _, _, _ = gen_spatial_bias(8, 30, [[2.0, 2.0]], 0.9, 1,
                                          habitat_fields=2, rng=rng)
        paths = emit_weight_grid(np.ones(train.n), train, tmp_path)
        raw = read_grid_csv(paths["grid_counts.csv"])
        assert raw.shape == (8, 8)  # every field present even when 0
        assert (raw == 0).any()

    def test_non_spatial_rejected(self, tmp_path):
        cfg = tiny_config()
        train, _, _ = generate_data(cfg.dataset, 1)
        with pytest.raises(ConfigError, match="spatial"):
            emit_weight_grid(np.ones(train.n), train, tmp_path)

    def test_misaligned_weights_rejected(self, spatial_fixture, tmp_path):
        train = spatial_fixture[0]
        with pytest.raises(ShapeError):
            emit_weight_grid(np.ones(train.n - 1), train, tmp_path)


class TestDiagnose:
    def test_identical_datasets_zero_discrepancy(self):
        rng = make_rng(5, STREAM_DATA)
        feats = rng.normal(size=(100, 3))
        report = diagnose_weights(np.ones(100), feats, feats.copy())
        assert report["discrepancy_uniform"] == 0.0
        assert report["discrepancy_weighted"] == 0.0

    def test_uniform_effective_sample_size_is_n(self):
        rng = make_rng(6, STREAM_DATA)
        feats = rng.normal(size=(73, 2))
        report = diagnose_weights(np.ones(73), feats, feats + 1.0)
        assert report["effective_sample_size"] == 73.0

    def test_oracle_weights_cut_discrepancy_tenfold(self):
        rng = make_rng(11, STREAM_DATA)
        x_p = rng.normal(0.0, 1.0, size=(20000, 1))
        x_q = rng.normal(1.0, 1.0, size=(20000, 1))
        w = np.exp(x_p[:, 0] - 0.5)
        report = diagnose_weights(w, x_p, x_q)
        assert report["discrepancy_uniform"] >= 10 * report["discrepancy_weighted"]

    def test_misalignment_rejected(self):
        with pytest.raises(ShapeError):
            diagnose_weights(np.ones(5), np.zeros((6, 2)), np.zeros((6, 2)))
