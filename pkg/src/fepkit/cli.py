"""Command-line front end: generate -> select features -> train -> evaluate,
plus the full experiment grid and preset calibration checks.

Commands are idempotent for fixed inputs and seeds; outputs land only under
the configured output directory (FEPKIT_OUT_DIR overrides it). Exit codes:
0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import evalsuite, featsel, models, tracegen
from .datamodel import (FEATURE_NAMES, IngestError, build_frame_table, load_corpus,
                        save_match_log, view_with_constants)
from .numcore import ConfigurationError, InputError

OUT_DIR_ENV = "FEPKIT_OUT_DIR"

# Checked-in schema for full-experiment configs. Each entry is
# (required, default, validator); validators raise InputError with the
# offending path. Unknown keys are rejected.

_TRAIN_KEYS = {
    "epochs": (False, 10, lambda v: isinstance(v, int) and v >= 0),
    "train_batch": (False, 1024, lambda v: isinstance(v, int) and v >= 1),
    "test_batch": (False, 128, lambda v: isinstance(v, int) and v >= 1),
    "chunks_per_step": (False, 16, lambda v: isinstance(v, int) and v >= 1),
    "grad_clip": (False, None, lambda v: v is None or (isinstance(v, (int, float)) and v > 0)),
}

_RFE_KEYS = {
    "subsample": (False, 20000, lambda v: isinstance(v, int) and v >= 100),
    "folds": (False, 3, lambda v: isinstance(v, int) and v >= 2),
}

CONFIG_SCHEMA = {
    "seed": (True, None, lambda v: isinstance(v, int) and not isinstance(v, bool)),
    "out_dir": (True, None, lambda v: isinstance(v, str) and v != ""),
    "presets": (True, None, lambda v: isinstance(v, list) and len(v) > 0
                and all(p in ("scr4", "scr5") for p in v)),
    "scale": (False, 1.0, lambda v: isinstance(v, (int, float)) and v > 0),
    "full_scale": (False, False, lambda v: isinstance(v, bool)),
    "splits": (False, [evalsuite.LINK_DISJOINT, evalsuite.PILOT],
               lambda v: isinstance(v, list) and len(v) > 0
               and all(s in (evalsuite.LINK_DISJOINT, evalsuite.PILOT) for s in v)),
    "architectures": (False, list(models.ARCHITECTURES),
                      lambda v: isinstance(v, list) and len(v) > 0
                      and all(a in models.ARCHITECTURES for a in v)),
    "features": (False, "auto", lambda v: v == "auto"
                 or (isinstance(v, list) and len(v) > 0
                     and all(f in FEATURE_NAMES for f in v))),
    "train": (False, {}, None),
    "rfe": (False, {}, None),
}


def _validate_section(doc: dict, schema: dict, path: str) -> dict:
    if not isinstance(doc, dict):
        raise InputError(f"{path or 'config'}: expected an object")
    for key in doc:
        if key not in schema:
            raise InputError(f"{path + '.' if path else ''}{key}: unknown key")
    out = {}
    for key, (required, default, check) in schema.items():
        where = f"{path + '.' if path else ''}{key}"
        if key not in doc:
            if required:
                raise InputError(f"{where}: required key missing")
            out[key] = default
            continue
        val = doc[key]
        if check is not None and not check(val):
            raise InputError(f"{where}: invalid value {val!r}")
        out[key] = val
    return out


def validate_experiment_config(doc: dict) -> dict:
    """Validate a full-experiment config against the checked-in schema;
    returns the config merged with defaults."""
    cfg = _validate_section(doc, CONFIG_SCHEMA, "")
    cfg["train"] = _validate_section(cfg["train"], _TRAIN_KEYS, "train")
    cfg["rfe"] = _validate_section(cfg["rfe"], _RFE_KEYS, "rfe")
    return cfg


def _out_dir(configured) -> Path:
    override = os.environ.get(OUT_DIR_ENV)
    return Path(override) if override else Path(configured)


def _preset_config(name: str, scale: float, full_scale: bool) -> tracegen.ScenarioConfig:
    cfg = tracegen.preset(name, full_scale=full_scale)
    if scale != 1.0:
        cfg = tracegen.scaled_config(cfg, scale)
    return cfg


def _write_json(path: Path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _preset_config(args.preset, args.scale, args.full_scale)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in range(cfg.matches):
        match = tracegen.generate_match(cfg, args.seed, m)
        save_match_log(match, out / f"match_{m:03d}.jsonl")
    summary = tracegen.calibration_summary(cfg, args.seed, preset_name=args.preset)
    _write_json(out / "calibration_report.json", summary)
    print(f"wrote {cfg.matches} match logs ({summary['frames']} frames, "
          f"error rate {summary['error_rate']:.3f}) to {out}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _preset_config(args.preset, args.scale, args.full_scale)
    summary = tracegen.calibration_summary(cfg, args.seed, preset_name=args.preset)
    if args.out:
        _write_json(_out_dir(args.out), summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary.get("within_tolerance", False) else 1


def _load_table(data_dir):
    paths = sorted(Path(data_dir).glob("match_*.jsonl"))
    if not paths:
        raise InputError(f"no match_*.jsonl files under {data_dir}")
    return build_frame_table(load_corpus(paths))


def _train_rows(table, mode: str, split_seed: int, subsample: int, seed: int):
    split = evalsuite.make_split(table, evalsuite.SplitSpec(mode=mode, seed=split_seed))
    rows = np.flatnonzero(split.train)
    if len(rows) > subsample:
        rng = np.random.default_rng(seed)
        rows = rows[rng.permutation(len(rows))[:subsample]]
        rows.sort()
    return rows


def _run_rfe(table, mode, split_seed, subsample, folds, seed):
    rows = _train_rows(table, mode, split_seed, subsample, seed)
    X = np.column_stack([table.features[n][rows] for n in FEATURE_NAMES])
    return featsel.rfe(X, table.labels[rows], FEATURE_NAMES, folds=folds, seed=seed)


def cmd_rfe(args) -> int:
    table = _load_table(args.data)
    result = _run_rfe(table, args.split, args.split_seed, args.subsample,
                      args.folds, args.seed)
    doc = {
        "elimination_order": list(result.elimination_order),
        "subset_scores": result.subset_scores,
        "selected": list(result.selected),
    }
    _write_json(_out_dir(args.out), doc)
    print(f"selected features: {', '.join(result.selected)}")
    return 0


def _resolve_features(features_arg, table, args):
    if features_arg != "auto":
        return [f.strip() for f in features_arg.split(",") if f.strip()]
    result = _run_rfe(table, args.split, args.split_seed, 20000, 3, args.seed)
    return list(result.selected)


def _train_config(args, kind) -> models.TrainConfig:
    return models.TrainConfig.for_architecture(
        kind, seed=args.seed, epochs=args.epochs, train_batch=args.train_batch,
        test_batch=args.test_batch)


def cmd_train(args) -> int:
    table = _load_table(args.data)
    features = _resolve_features(args.features, table, args)
    config = _train_config(args, args.arch)
    split_spec = evalsuite.SplitSpec(mode=args.split, seed=args.split_seed)
    model, report = evalsuite.train_and_evaluate(
        table, split_spec, args.arch, features, config,
        dataset=str(args.data), with_profile=False)
    models.save_model(model, _out_dir(args.out))
    print(f"trained {args.arch} on {features}; test accuracy "
          f"{report.accuracy:.4f}, weighted {report.weighted_accuracy:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    model = models.load_model(args.model)
    if model.feature_names is None:
        raise InputError("model file has no feature schema; was it trained?")
    table = _load_table(args.data)
    view = view_with_constants(table, model.feature_names, model.mean, model.std)
    split = evalsuite.make_split(
        table, evalsuite.SplitSpec(mode=args.split, seed=args.split_seed))
    test_view = view.select(split.test)
    y_pred = models.predict_labels(model, test_view, args.test_batch)
    report = evalsuite.build_report(
        test_view.y, y_pred, test_view.link_ids, test_view.snr_db,
        dataset=str(args.data), split_mode=args.split,
        architecture=model.spec.kind, seed=model.seed,
        features=model.feature_names)
    evalsuite.save_report(report, _out_dir(args.out))
    print(f"accuracy {report.accuracy:.4f}, weighted {report.weighted_accuracy:.4f} "
          f"over {report.n_frames} frames")
    return 0


def cmd_cross_train(args) -> int:
    split_spec = evalsuite.SplitSpec(mode=args.split, seed=args.split_seed)
    cfg_a = _preset_config(args.train_preset, args.scale, False)
    cfg_b = _preset_config(args.test_preset, args.scale, False)
    config = models.TrainConfig.for_architecture(args.arch, seed=args.seed,
                                                 epochs=args.epochs)
    features = None
    if args.features != "auto":
        features = [f.strip() for f in args.features.split(",") if f.strip()]
    report = evalsuite.cross_train(
        cfg_a if args.train_preset != args.test_preset else args.train_preset,
        cfg_b if args.train_preset != args.test_preset else args.test_preset,
        split_spec, args.arch, config, features=features, seed=args.seed)
    report = dataclasses.replace(
        report, dataset=f"{args.train_preset}->{args.test_preset}")
    evalsuite.save_report(report, _out_dir(args.out))
    print(f"cross-train {args.train_preset}->{args.test_preset}: accuracy "
          f"{report.accuracy:.4f}, weighted {report.weighted_accuracy:.4f}")
    return 0


def cmd_full_experiment(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    cfg = validate_experiment_config(doc)
    out_root = _out_dir(cfg["out_dir"])
    out_root.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    summary_rows = []
    for preset_name in cfg["presets"]:
        scen = _preset_config(preset_name, cfg["scale"], cfg["full_scale"])
        table = build_frame_table(tracegen.generate_scrimmage(scen, seed))
        if cfg["features"] == "auto":
            result = _run_rfe(table, evalsuite.LINK_DISJOINT, seed,
                              cfg["rfe"]["subsample"], cfg["rfe"]["folds"], seed)
            features = list(result.selected)
            _write_json(out_root / preset_name / "rfe.json", {
                "elimination_order": list(result.elimination_order),
                "subset_scores": result.subset_scores,
                "selected": features,
            })
        else:
            features = list(cfg["features"])
        for split_mode in cfg["splits"]:
            split_spec = evalsuite.SplitSpec(mode=split_mode, seed=seed)
            for arch in cfg["architectures"]:
                config = models.TrainConfig.for_architecture(
                    arch, seed=seed, **cfg["train"])
                _, report = evalsuite.train_and_evaluate(
                    table, split_spec, arch, features, config,
                    dataset=preset_name, with_profile=True)
                cell_dir = out_root / preset_name / split_mode / arch
                evalsuite.save_report(report, cell_dir)
                summary_rows.append([preset_name, split_mode, arch,
                                     f"{report.accuracy:.10f}",
                                     f"{report.weighted_accuracy:.10f}"])
                print(f"{preset_name}/{split_mode}/{arch}: accuracy "
                      f"{report.accuracy:.4f}, weighted {report.weighted_accuracy:.4f}")
    with (out_root / "summary.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dataset", "split_mode", "architecture", "accuracy",
                     "weighted_accuracy"])
        wr.writerows(summary_rows)
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fepkit", description="Frame error prediction experiment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="generate synthetic match logs for a preset")
    p.add_argument("--preset", required=True, choices=["scr4", "scr5"])
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=1.0,
                   help="shrink frames per link, preserving per-frame rates")
    p.add_argument("--full-scale", action="store_true",
                   help="source-dataset-sized generation instead of desk scale")
    add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("calibrate", help="measure a preset against its targets")
    p.add_argument("--preset", required=True, choices=["scr4", "scr5"])
    p.add_argument("--out", default=None)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--full-scale", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("rfe", help="recursive feature elimination report")
    p.add_argument("--data", required=True, help="directory of match_*.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=evalsuite.LINK_DISJOINT,
                   choices=[evalsuite.LINK_DISJOINT, evalsuite.PILOT])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--subsample", type=int, default=20000)
    p.add_argument("--folds", type=int, default=3)
    add_common(p)
    p.set_defaults(func=cmd_rfe)

    p = sub.add_parser("train", help="train one architecture on a data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", required=True, choices=list(models.ARCHITECTURES))
    p.add_argument("--features", default="auto",
                   help="comma-separated feature names, or 'auto' for RFE")
    p.add_argument("--split", default=evalsuite.LINK_DISJOINT,
                   choices=[evalsuite.LINK_DISJOINT, evalsuite.PILOT])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--train-batch", type=int, default=1024)
    p.add_argument("--test-batch", type=int, default=128)
    p.add_argument("--out", required=True, help="model file path")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model on a data directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=evalsuite.LINK_DISJOINT,
                   choices=[evalsuite.LINK_DISJOINT, evalsuite.PILOT])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--test-batch", type=int, default=128)
    p.add_argument("--out", required=True, help="report directory")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cross-train", help="train on one preset, test on another")
    p.add_argument("--train-preset", required=True, choices=["scr4", "scr5"])
    p.add_argument("--test-preset", required=True, choices=["scr4", "scr5"])
    p.add_argument("--arch", default="mlp", choices=list(models.ARCHITECTURES))
    p.add_argument("--features", default="auto")
    p.add_argument("--split", default=evalsuite.LINK_DISJOINT,
                   choices=[evalsuite.LINK_DISJOINT, evalsuite.PILOT])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", required=True, help="report directory")
    add_common(p)
    p.set_defaults(func=cmd_cross_train)

    p = sub.add_parser("full-experiment",
                       help="the full grid: presets x splits x architectures")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.set_defaults(func=cmd_full_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (InputError, ConfigurationError, IngestError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
