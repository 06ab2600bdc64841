"""Batch experiment driver: generate, train every method, write artifacts.

Directory layout per experiment::

    <out>/<name>/
        data/<seed>/{train,test,val}.csv (+ .meta.json sidecars)
        <method>/<seed>/report.json      per-run metrics and config echo
        <method>/<seed>/curves.csv       per-epoch losses and validation AUC
        <method>/<seed>/weights.csv      final training-row weights
        <method>/<seed>/predictions.csv  test-set probabilities
        summary.json, summary.csv        mean and standard error per method
        failures.json                    only when some runs died

Every artifact is plain CSV or JSON and is re-read by this module's own
loaders, so round-tripping is part of the contract.
"""

import csv
import dataclasses
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import dfw_weights, kde_weights, kliep_weights
from .errors import ConfigError, ShapeError
from .metrics import effective_sample_size, evaluate_multilabel
from .networks import extract_features
from .rng import STREAM_DATA, make_rng
from .shift import ShiftWeights, feature_discrepancy, uniform_weights
from .synthdata import (Dataset, gen_gaussian_shift, gen_spatial_bias,
                        load_dataset, save_dataset, true_shift_factor)
from .trainer import ScnConfig, train_scn, train_vanilla, train_weighted

METHODS = ("vanilla", "scn", "scn_d", "scn_fsmm", "scn_minus",
           "kde", "kliep", "dfw", "oracle")

SCN_VARIANT_OF = {"scn": "full", "scn_d": "d_only", "scn_fsmm": "fsmm_only",
                  "scn_minus": "no_moving_avg"}

GENERATORS = ("gaussian_shift", "spatial_bias")

_GAUSSIAN_KEYS = {"n_train", "n_test", "n_val", "dim", "mean_p", "mean_q",
                  "n_labels"}
_SPATIAL_KEYS = {"grid_size", "n_train", "n_test", "n_val", "hotspot_centers",
                 "hotspot_strength", "hotspot_sigma", "n_species",
                 "habitat_fields"}


def _require_keys(d, allowed, required, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


@dataclasses.dataclass
class ExperimentConfig:
    """Validated experiment description, normally parsed from JSON."""

    name: str
    dataset: dict
    methods: tuple
    seeds: tuple
    scn: dict = dataclasses.field(default_factory=dict)
    pretrain_epochs: int = 20
    normalize_weights: bool = False

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.methods:
            raise ConfigError("need at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be a nonempty list of distinct integers")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        self._validate_dataset()
        scn_fields = {f.name for f in dataclasses.fields(ScnConfig)} - {"seed"}
        _require_keys(self.scn, scn_fields, set(), "scn")

    def _validate_dataset(self):
        d = self.dataset
        if "generator" in d:
            _require_keys(d, {"generator", "params", "data_seed"},
                          {"generator"}, "dataset")
            gen = d["generator"]
            if gen not in GENERATORS:
                raise ConfigError(f"unknown generator {gen!r}; choose from {GENERATORS}")
            params = d.get("params", {})
            allowed = _GAUSSIAN_KEYS if gen == "gaussian_shift" else _SPATIAL_KEYS
            _require_keys(params, allowed, set(), "dataset.params")
        elif "train" in d or "test" in d:
            _require_keys(d, {"train", "test", "val"}, {"train", "test"}, "dataset")
            for key in ("train", "test", "val"):
                if key in d and not Path(d[key]).exists():
                    raise ConfigError(f"dataset.{key} file not found: {d[key]}")
        else:
            raise ConfigError(
                "dataset needs either a 'generator' or 'train'/'test' file paths")

    def scn_config(self, seed, variant="full"):
        overrides = dict(self.scn)
        overrides.setdefault("normalize_weights", self.normalize_weights)
        return ScnConfig(seed=seed, variant=variant, **overrides)

    @classmethod
    def from_dict(cls, d):
        _require_keys(d, {"name", "dataset", "methods", "seeds", "scn",
                          "pretrain_epochs", "normalize_weights"},
                      {"name", "dataset", "methods", "seeds"}, "config")
        return cls(name=str(d["name"]), dataset=d["dataset"],
                   methods=d["methods"], seeds=d["seeds"],
                   scn=d.get("scn", {}),
                   pretrain_epochs=d.get("pretrain_epochs", 20),
                   normalize_weights=bool(d.get("normalize_weights", False)))


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# data plumbing


def generate_data(dataset_spec, seed):
    """Materialize (train, test, val) splits for one seed.

    A `data_seed` in the spec pins the dataset across run seeds, so the
    seeds list varies only initialization and batch order; without it
    each run seed draws its own dataset.
    """
    if "generator" not in dataset_spec:
        train = load_dataset(dataset_spec["train"])
        test = load_dataset(dataset_spec["test"])
        val = load_dataset(dataset_spec["val"]) if "val" in dataset_spec else None
        return train, test, val

    params = dict(dataset_spec.get("params", {}))
    if "data_seed" in dataset_spec:
        seed = int(dataset_spec["data_seed"])
    rng = make_rng(seed, STREAM_DATA)
    if dataset_spec["generator"] == "gaussian_shift":
        n_train = int(params.pop("n_train", 2000))
        n_test = int(params.pop("n_test", 1000))
        n_val = int(params.pop("n_val", max(n_test // 2, 1)))
        dim = int(params.pop("dim", 2))
        mean_p = params.pop("mean_p", [0.0] * dim)
        mean_q = params.pop("mean_q", [1.0] * dim)
        n_labels = int(params.pop("n_labels", 5))
        train, q_all, _ = gen_gaussian_shift(
            n_train, n_test + n_val, dim=dim, mean_p=mean_p, mean_q=mean_q,
            rng=rng, n_labels=n_labels)
        test = Dataset(q_all.features[:n_test], q_all.labels[:n_test],
                       "test", q_all.oracle)
        val = Dataset(q_all.features[n_test:], q_all.labels[n_test:],
                      "val", q_all.oracle)
        return train, test, val

    grid_size = int(params.pop("grid_size", 32))
    n_train = int(params.pop("n_train", 20000))
    centers = params.pop("hotspot_centers",
                         [[grid_size * 0.25, grid_size * 0.25],
                          [grid_size * 0.7, grid_size * 0.3],
                          [grid_size * 0.5, grid_size * 0.8]])
    strength = float(params.pop("hotspot_strength", 0.85))
    n_species = int(params.pop("n_species", 10))
    train, test, val, _ = gen_spatial_bias(
        grid_size, n_train, centers, strength, n_species,
        habitat_fields=int(params.pop("habitat_fields", 16)),
        hotspot_sigma=params.pop("hotspot_sigma", None),
        n_test=params.pop("n_test", None),
        n_val=params.pop("n_val", None),
        rng=rng)
    return train, test, val


def _is_spatial(ds):
    return ds.oracle is not None and ds.oracle.meta.get("generator") == "spatial_bias"


def _ratio_estimation_columns(ds):
    """Kernel methods get the 2-D coordinates on spatial data: the raw
    feature vector is too wide for density estimation, and the sampling
    bias lives in space by construction."""
    if _is_spatial(ds):
        return ds.features[:, :2]
    return ds.features


# --------------------------------------------------------------------------
# single runs


def run_single(method, seed, train, test, val, exp_cfg):
    """Train one method on one seed; returns (model, report dict, arrays)."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    started = time.perf_counter()

    if method == "vanilla":
        cfg = exp_cfg.scn_config(seed)
        model, train_report = train_vanilla(train, val, cfg)
        weights = train_report.final_weights
    elif method in SCN_VARIANT_OF:
        cfg = exp_cfg.scn_config(seed, variant=SCN_VARIANT_OF[method])
        model, train_report = train_scn(train, test.features, val, cfg)
        weights = train_report.final_weights
    else:
        cfg = exp_cfg.scn_config(seed)
        weights = estimate_weights(method, train, test, cfg, seed)
        if exp_cfg.normalize_weights:
            weights = ShiftWeights(weights.values / weights.values.mean(),
                                   weights.source)
        model, train_report = train_weighted(
            train, weights, val, cfg, pretrain_epochs=exp_cfg.pretrain_epochs)

    probs = model.predict_proba(test.features)
    metrics = evaluate_multilabel(probs, test.labels, weights=None)
    # discrepancy is measured in the trained model's own feature space,
    # so each method is judged on the representation it actually uses
    model.g.set_mode("eval")
    feats_train = extract_features(model.g, train.features).values
    feats_test = extract_features(model.g, test.features).values
    disc_uniform = feature_discrepancy(uniform_weights(train.n),
                                       feats_train, feats_test)
    disc_weighted = feature_discrepancy(weights, feats_train, feats_test)

    report = {
        "method": method,
        "seed": seed,
        "n_train": train.n,
        "n_test": test.n,
        "macro_auc": metrics.macro_auc,
        "macro_ap": metrics.macro_ap,
        "macro_f1": metrics.macro_f1,
        "unweighted_risk": metrics.unweighted_risk,
        "discrepancy_uniform": disc_uniform,
        "discrepancy_weighted": disc_weighted,
        "weight_source": weights.source,
        "weight_min": float(weights.values.min()),
        "weight_median": float(np.median(weights.values)),
        "weight_max": float(weights.values.max()),
        "effective_sample_size": effective_sample_size(weights),
        "metrics": metrics.as_dict(),
        "train_config": cfg.to_dict(),
        "curves": {
            "loss_d": train_report.loss_d,
            "loss_fsmm": train_report.loss_fsmm,
            "loss_c": train_report.loss_c,
            "val_auc": train_report.val_auc,
        },
        "best_epoch": train_report.best_epoch,
        "stopped_early": train_report.stopped_early,
        "wall_clock": time.perf_counter() - started,
    }
    return model, report, weights, probs


def estimate_weights(method, train, test, cfg, seed):
    """Fixed-weight estimators used ahead of weighted training."""
    if method == "oracle":
        if train.oracle is None:
            raise ConfigError("oracle method needs a dataset with a density oracle")
        return ShiftWeights(true_shift_factor(train.oracle, train.features),
                            "oracle")
    x_p = _ratio_estimation_columns(train)
    x_q = _ratio_estimation_columns(test)
    if method == "kde":
        return kde_weights(x_p, x_q)
    if method == "kliep":
        return kliep_weights(x_p, x_q, rng=make_rng(seed, 100))
    if method == "dfw":
        return dfw_weights(train.features, test.features,
                           g_hidden=cfg.g_hidden, d_hidden=cfg.d_hidden,
                           epochs=cfg.epochs, batch_size=cfg.batch_size,
                           keep_prob=cfg.keep_prob,
                           rng=make_rng(seed, 101))
    raise ConfigError(f"{method!r} is not a weight estimator")


# --------------------------------------------------------------------------
# artifact files


def write_weights_csv(path, weights):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w"])
        for v in weights.values:
            writer.writerow([f"{v:.17g}"])


def read_weights_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["w"]:
            raise ShapeError(f"not a weights file: header {header}")
        return np.array([float(r[0]) for r in reader])


def write_predictions_csv(path, probs):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"prob{j}" for j in range(probs.shape[1])])
        for row in probs:
            writer.writerow([f"{v:.17g}" for v in row])


def read_predictions_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or not header[0].startswith("prob"):
            raise ShapeError(f"not a predictions file: header {header}")
        return np.array([[float(v) for v in r] for r in reader])


def write_curves_csv(path, curves):
    cols = ["epoch", "loss_d", "loss_fsmm", "loss_c", "val_auc"]
    n = len(curves["loss_c"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(n):
            val = curves["val_auc"][i]
            writer.writerow([i,
                             f"{curves['loss_d'][i]:.17g}",
                             f"{curves['loss_fsmm'][i]:.17g}",
                             f"{curves['loss_c'][i]:.17g}",
                             "" if val is None else f"{val:.17g}"])


def read_curves_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    return {
        "loss_d": [float(r[1]) for r in rows],
        "loss_fsmm": [float(r[2]) for r in rows],
        "loss_c": [float(r[3]) for r in rows],
        "val_auc": [None if r[4] == "" else float(r[4]) for r in rows],
    }


def _write_run_artifacts(run_dir, report, weights, probs):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    curves = report.pop("curves")
    with open(run_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    write_curves_csv(run_dir / "curves.csv", curves)
    write_weights_csv(run_dir / "weights.csv", weights)
    write_predictions_csv(run_dir / "predictions.csv", probs)


# --------------------------------------------------------------------------
# the full experiment


def _one_task(args):
    exp_cfg, out_root, method, seed = args
    train, test, val = generate_data(exp_cfg.dataset, seed)
    model, report, weights, probs = run_single(method, seed, train, test,
                                               val, exp_cfg)
    _write_run_artifacts(Path(out_root) / method / str(seed), report,
                         weights, probs)
    return report


SUMMARY_FIELDS = ("macro_auc", "macro_ap", "macro_f1", "unweighted_risk",
                  "discrepancy_uniform", "discrepancy_weighted",
                  "effective_sample_size")


def summarize(reports):
    """Mean and standard error across seeds for each method."""
    by_method = {}
    for rep in reports:
        by_method.setdefault(rep["method"], []).append(rep)
    summary = {}
    for method, reps in by_method.items():
        reps = sorted(reps, key=lambda r: r["seed"])
        entry = {"seeds": [r["seed"] for r in reps], "n_runs": len(reps)}
        for field in SUMMARY_FIELDS:
            vals = np.array([r[field] for r in reps], dtype=np.float64)
            entry[f"{field}_mean"] = float(vals.mean())
            entry[f"{field}_se"] = (
                float(vals.std(ddof=1) / np.sqrt(len(vals)))
                if len(vals) > 1 else 0.0)
        summary[method] = entry
    return summary


def _write_summary(out_root, summary):
    out_root = Path(out_root)
    with open(out_root / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    methods = sorted(summary)
    with open(out_root / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + [f"{f}_{s}" for f in SUMMARY_FIELDS
                                      for s in ("mean", "se")])
        for method in methods:
            entry = summary[method]
            row = [method] + [f"{entry[f'{f}_{s}']:.17g}" for f in SUMMARY_FIELDS
                              for s in ("mean", "se")]
            writer.writerow(row)


def run_experiment(exp_cfg, out_dir, threads=1, save_data=True):
    """Run every (method, seed) pair; returns a process exit code."""
    out_root = Path(out_dir) / exp_cfg.name
    out_root.mkdir(parents=True, exist_ok=True)

    if save_data and "generator" in exp_cfg.dataset:
        for seed in exp_cfg.seeds:
            data_dir = out_root / "data" / str(seed)
            data_dir.mkdir(parents=True, exist_ok=True)
            train, test, val = generate_data(exp_cfg.dataset, seed)
            save_dataset(train, data_dir / "train.csv", seed=seed)
            save_dataset(test, data_dir / "test.csv", seed=seed)
            if val is not None:
                save_dataset(val, data_dir / "val.csv", seed=seed)

    tasks = [(exp_cfg, out_root, method, seed)
             for method in exp_cfg.methods for seed in exp_cfg.seeds]
    reports, failures = [], []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_one_task, t): t for t in tasks}
            for future, task in futures.items():
                try:
                    reports.append(future.result())
                except Exception as err:  # noqa: BLE001 - manifest captures it
                    failures.append({"method": task[2], "seed": task[3],
                                     "error": repr(err),
                                     "traceback": traceback.format_exc()})
    else:
        for task in tasks:
            try:
                reports.append(_one_task(task))
            except Exception as err:  # noqa: BLE001 - manifest captures it
                failures.append({"method": task[2], "seed": task[3],
                                 "error": repr(err),
                                 "traceback": traceback.format_exc()})

    if reports:
        _write_summary(out_root, summarize(reports))
    if failures:
        with open(out_root / "failures.json", "w") as fh:
            json.dump(failures, fh, indent=2)
        return 1
    return 0


# --------------------------------------------------------------------------
# diagnostics


def diagnose_weights(weights, train_features, test_features):
    """Mean-matching diagnostic for a weight vector vs the uniform one."""
    values = weights.values if isinstance(weights, ShiftWeights) else \
        np.asarray(weights, dtype=np.float64).ravel()
    if values.shape[0] != np.asarray(train_features).shape[0]:
        raise ShapeError(
            f"{values.shape[0]} weights misaligned with "
            f"{np.asarray(train_features).shape[0]} training rows")
    return {
        "discrepancy_weighted": feature_discrepancy(values, train_features,
                                                    test_features),
        "discrepancy_uniform": feature_discrepancy(
            np.ones(values.shape[0]), train_features, test_features),
        "weight_min": float(values.min()),
        "weight_median": float(np.median(values)),
        "weight_max": float(values.max()),
        "effective_sample_size": effective_sample_size(values),
        "n": int(values.shape[0]),
    }


LOG_BIN_EDGES = 2.0 ** np.arange(0, 9)  # 1, 2, 4, ..., 256


def emit_weight_grid(weights, ds, out_dir, grid_size=None):
    """Spatial density of the training rows, raw and weight-summed.

    Writes four row-major CSV grids: counts, weighted counts, and a
    log2-binned variant of each (bin k covers [2^(k-1), 2^k); values
    below 1 land in bin 0, values at or above 256 in bin 9).
    """
    if not _is_spatial(ds):
        raise ConfigError("weight grids need a spatial dataset")
    g = int(grid_size if grid_size is not None else ds.oracle.meta["grid_size"])
    values = weights.values if isinstance(weights, ShiftWeights) else \
        np.asarray(weights, dtype=np.float64).ravel()
    if values.shape[0] != ds.n:
        raise ShapeError(
            f"{values.shape[0]} weights misaligned with {ds.n} rows")

    cells = np.floor(ds.features[:, :2]).astype(int)
    np.clip(cells, 0, g - 1, out=cells)
    raw = np.zeros((g, g))
    weighted = np.zeros((g, g))
    np.add.at(raw, (cells[:, 0], cells[:, 1]), 1.0)
    np.add.at(weighted, (cells[:, 0], cells[:, 1]), values)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    grids = {
        "grid_counts.csv": raw,
        "grid_weighted.csv": weighted,
        "grid_counts_log2.csv": np.digitize(raw, LOG_BIN_EDGES),
        "grid_weighted_log2.csv": np.digitize(weighted, LOG_BIN_EDGES),
    }
    for name, grid in grids.items():
        path = out_dir / name
        integral = np.issubdtype(grid.dtype, np.integer)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in grid:
                writer.writerow([str(int(v)) if integral else f"{v:.17g}"
                                 for v in row])
        paths[name] = path
    return paths


def read_grid_csv(path):
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])
