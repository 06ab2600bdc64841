"""Command-line surface: dataset generation, training, batch experiments.

Verbs:
    generate   write synthetic train/test/val splits to CSV
    train      train one method on dataset files, write run artifacts
    evaluate   score a predictions file against a labeled dataset
    run        full multi-method, multi-seed experiment from a config
    diagnose   mean-matching discrepancy and weight statistics
    grid       spatial density grids (raw and weight-summed)

Console numbers are printed with 6 significant digits; files keep full
precision.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .experiment import (ExperimentConfig, diagnose_weights, emit_weight_grid,
                         generate_data, load_config, read_predictions_csv,
                         read_weights_csv, run_experiment, run_single,
                         _write_run_artifacts)
from .metrics import evaluate_multilabel
from .synthdata import load_dataset, save_dataset


def _fmt(value):
    if value is None:
        return "n/a"
    return f"{value:.6g}"


def _print_kv(pairs):
    for key, value in pairs:
        print(f"{key}: {_fmt(value) if isinstance(value, (int, float)) or value is None else value}")


def _load_split(path, expect_labels=False):
    ds = load_dataset(path)
    if expect_labels and ds.labels is None:
        raise ConfigError(f"{path} has no label columns")
    return ds


def cmd_generate(args):
    spec = {"generator": args.generator, "params": {}}
    if args.params:
        spec["params"] = json.loads(Path(args.params).read_text()) \
            if Path(args.params).exists() else json.loads(args.params)
    cfg_probe = {"name": "probe", "dataset": spec, "methods": ["vanilla"],
                 "seeds": [args.seed]}
    ExperimentConfig.from_dict(cfg_probe)  # reuse the schema validation

    train, test, val = generate_data(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.csv", seed=args.seed)
    save_dataset(test, out / "test.csv", seed=args.seed)
    if val is not None:
        save_dataset(val, out / "val.csv", seed=args.seed)
    _print_kv([("generator", args.generator), ("seed", args.seed),
               ("train_rows", train.n), ("test_rows", test.n),
               ("val_rows", 0 if val is None else val.n),
               ("feature_dim", train.dim), ("out", str(out))])
    return 0


def cmd_train(args):
    train = _load_split(args.train, expect_labels=True)
    test = _load_split(args.test, expect_labels=True)
    val = _load_split(args.val, expect_labels=True) if args.val else None
    scn_overrides = json.loads(Path(args.config).read_text()) if args.config else {}
    exp_cfg = ExperimentConfig(
        name="single", dataset={"train": args.train, "test": args.test},
        methods=[args.method], seeds=[args.seed], scn=scn_overrides,
        pretrain_epochs=args.pretrain_epochs,
        normalize_weights=args.normalize_weights)

    _, report, weights, probs = run_single(args.method, args.seed, train,
                                           test, val, exp_cfg)
    out = Path(args.out) / args.method / str(args.seed)
    summary = [(k, report[k]) for k in
               ("method", "seed", "macro_auc", "macro_ap", "macro_f1",
                "unweighted_risk", "discrepancy_weighted",
                "discrepancy_uniform", "effective_sample_size")]
    _write_run_artifacts(out, report, weights, probs)
    _print_kv(summary + [("artifacts", str(out))])
    return 0


def cmd_evaluate(args):
    ds = _load_split(args.data, expect_labels=True)
    probs = read_predictions_csv(args.predictions)
    if probs.shape[0] != ds.n:
        raise ConfigError(
            f"{probs.shape[0]} prediction rows vs {ds.n} dataset rows")
    weights = read_weights_csv(args.weights) if args.weights else None
    report = evaluate_multilabel(probs, ds.labels, threshold=args.threshold,
                                 weights=weights)
    _print_kv([("macro_auc", report.macro_auc), ("macro_ap", report.macro_ap),
               ("macro_f1", report.macro_f1),
               ("unweighted_risk", report.unweighted_risk),
               ("weighted_risk", report.weighted_risk),
               ("labels_scored", report.n_labels - len(report.excluded_labels)),
               ("labels_excluded", len(report.excluded_labels))])
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(report.as_dict(), fh, indent=2)
    return 0


def cmd_run(args):
    exp_cfg = load_config(args.config)
    code = run_experiment(exp_cfg, args.out, threads=args.threads)
    summary_path = Path(args.out) / exp_cfg.name / "summary.json"
    if summary_path.exists():
        with open(summary_path) as fh:
            summary = json.load(fh)
        for method in sorted(summary):
            entry = summary[method]
            print(f"{method}: macro_auc {_fmt(entry['macro_auc_mean'])} "
                  f"± {_fmt(entry['macro_auc_se'])} "
                  f"(discrepancy {_fmt(entry['discrepancy_weighted_mean'])}, "
                  f"{entry['n_runs']} runs)")
    if code != 0:
        print(f"failures recorded in {Path(args.out) / exp_cfg.name / 'failures.json'}",
              file=sys.stderr)
    return code


def cmd_diagnose(args):
    train = _load_split(args.train)
    test = _load_split(args.test)
    weights = read_weights_csv(args.weights)
    report = diagnose_weights(weights, train.features, test.features)
    _print_kv(sorted(report.items()))
    return 0


def cmd_grid(args):
    ds = _load_split(args.data)
    weights = read_weights_csv(args.weights) if args.weights \
        else np.ones(ds.n)
    paths = emit_weight_grid(weights, ds, args.out, grid_size=args.grid_size)
    _print_kv([(name, str(path)) for name, path in sorted(paths.items())])
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shiftcomp",
        description="Covariate-shift correction: weighting, training, evaluation.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", help="write synthetic dataset splits")
    p.add_argument("--generator", required=True,
                   choices=("gaussian_shift", "spatial_bias"))
    p.add_argument("--params", default=None,
                   help="JSON dict of generator parameters, inline or a file path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train one method on dataset files")
    p.add_argument("--method", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--config", default=None,
                   help="JSON file of training hyperparameter overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pretrain-epochs", type=int, default=20)
    p.add_argument("--normalize-weights", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None, help="optional metrics JSON path")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("run", help="full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("diagnose", help="weight discrepancy diagnostics")
    p.add_argument("--weights", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("grid", help="spatial density grids as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_grid)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
