"""Command-line entry points: data generation, training, threshold sweep,
scoring, single-record prediction and the joint-vs-single comparison.

Every command reads an optional JSON run configuration (``--config``).
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from .conditioning import condition_record
from .evaluation import IOU_EVAL, THETA_GRID, ThresholdSet, evaluate, predict_record, write_curves
from .geometry import default_class_config
from .network.model import ModelConfig, SplitStreamNet
from .pipeline import VARIANTS, checkpoint_path, fit_and_score, load_split, sweep_on, variant_config
from .signal_io import EVENT_CLASSES, load_record
from .synthetic import SynthConfig, generate_dataset
from .training import TrainConfig, train

log = logging.getLogger("sleepdetect")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 1}
_unit = {"type": "number", "minimum": 0, "maximum": 1}


def _per_class(schema):
    return {"type": "object", "properties": {k: schema for k in EVENT_CLASSES}, "additionalProperties": False}


_pair = {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "n_records": {"type": "integer", "minimum": 3},
        "iou_eval": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "theta_grid": {"type": "array", "items": _unit, "minItems": 1},
        "windows": _per_class(_pair),
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"manifest": {"type": "string"}, "checkpoint": {"type": "string"},
                           "thresholds": {"type": "string"}},
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "duration": _pos, "fs": _pos, "rates": _per_class(_nonneg), "duration_ranges": _per_class(_pair),
                "arousal_amplitude": _nonneg, "leg_amplitude": _nonneg, "noise_level": _pos,
                "attenuation": {"type": "array", "items": _unit, "minItems": 2, "maxItems": 2},
                "rate_spread": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "cooccurrence": _unit, "min_gap": _nonneg,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "f0": _count, "k_max": _count, "n_h": _count, "n_a": _count, "segment_length": _pos,
                "head": {"enum": ["dense", "depthwise"]}, "weight_decay": _nonneg,
                "bn_eps": _pos, "bn_momentum": _unit, "dtype": {"enum": ["float32", "float64"]},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta1": _unit, "beta2": _unit, "lr": _pos, "eps": _pos, "lr_patience": _count,
                "lr_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "stop_patience": _count,
                "neg_ratio": _count, "match_iou": _unit, "batch_size": _count, "steps_per_epoch": _count,
                "max_epochs": _count, "eval_segments": _count, "max_seconds": _pos,
            },
        },
    },
}


class ConfigError(Exception):
    pass


def _path_of(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def load_run_config(path) -> dict:
    """Read and schema-check a run configuration; errors name the offending field."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: dict) -> None:
    errors = sorted(jsonschema.Draft7Validator(RUN_SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"config error at {_path_of(e)}: {e.message}" for e in errors))


def _build(cls, section: dict, where: str, **extra):
    known = {f.name for f in fields(cls)}
    kwargs = {k: v for k, v in section.items() if k in known}
    try:
        return cls(**kwargs, **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config error at {where}: {e}") from None


def synth_config(cfg: dict, seed: int) -> SynthConfig:
    return _build(SynthConfig, cfg.get("synth", {}), "synth", seed=seed)


def model_config(cfg: dict, variant: str, single_event: str | None) -> ModelConfig:
    section = dict(cfg.get("model", {}))
    if "windows" in cfg:
        windows = default_class_config(EVENT_CLASSES)
        windows.update({k: tuple(v) for k, v in cfg["windows"].items()})
        section["class_config"] = windows
    base = _build(ModelConfig, section, "model")
    try:
        return variant_config(base, variant, single_event)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def train_config(cfg: dict) -> TrainConfig:
    return _build(TrainConfig, cfg.get("train", {}), "train")


def theta_grid(cfg: dict) -> np.ndarray:
    return np.asarray(cfg.get("theta_grid", THETA_GRID), dtype=float)


def _existing(arg, cfg: dict, key: str, flag: str) -> Path:
    value = arg if arg is not None else cfg.get("paths", {}).get(key)
    if value is None:
        raise ConfigError(f"{flag} is required (or set paths.{key} in the config)")
    p = Path(value)
    if not p.exists():
        raise ConfigError(f"{flag}: path does not exist: {p}")
    return p


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


# -- commands ------------------------------------------------------------------------


def cmd_gen_data(args, cfg) -> int:
    seed = _seed(args, cfg)
    manifest = generate_dataset(int(cfg.get("n_records", 20)), synth_config(cfg, seed), seed, args.out)
    path = Path(args.out) / "manifest.json"
    counts = {s: len(manifest.subset(s)) for s in ("train", "eval", "test")}
    print(json.dumps({"manifest": str(path), "splits": counts}))
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    manifest = _existing(args.manifest, cfg, "manifest", "--manifest")
    mcfg = model_config(cfg, args.variant, args.single_event)
    tcfg = train_config(cfg)
    seed = _seed(args, cfg)
    max_seconds = cfg.get("train", {}).get("max_seconds")
    res = train(load_split(manifest, "train"), load_split(manifest, "eval"), mcfg, tcfg, seed, args.out, max_seconds)
    res.net.save(checkpoint_path(args.out), seed=seed, epoch=res.best_epoch,
                 extra={"variant": args.variant, "single_event": args.single_event})
    print(json.dumps({"checkpoint": str(checkpoint_path(args.out)), "best_epoch": res.best_epoch,
                      "epochs": len(res.history)}))
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    ckpt = _existing(args.checkpoint, cfg, "checkpoint", "--checkpoint")
    manifest = _existing(args.manifest, cfg, "manifest", "--manifest")
    net, _ = SplitStreamNet.load(ckpt)
    grid = theta_grid(cfg)
    ths, curves = sweep_on(net, load_split(manifest, "eval"), float(cfg.get("iou_eval", IOU_EVAL)), grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ths.save(out / "thresholds.json")
    write_curves(curves, grid, out / "f1_curves.csv")
    print(json.dumps({"thresholds": ths.thresholds}))
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    ckpt = _existing(args.checkpoint, cfg, "checkpoint", "--checkpoint")
    thr = _existing(args.thresholds, cfg, "thresholds", "--thresholds")
    manifest = _existing(args.manifest, cfg, "manifest", "--manifest")
    net, _ = SplitStreamNet.load(ckpt)
    ths = ThresholdSet.load(thr)
    missing = set(net.config.classes) - set(ths.thresholds)
    if missing:
        raise ConfigError(f"--thresholds lacks classes {sorted(missing)}")
    report = evaluate(net, ths, load_split(manifest, "test"), float(cfg.get("iou_eval", IOU_EVAL)), args.workers)
    report.write(args.out)
    print(json.dumps({k: round(v["f1"]["mean"], 4) for k, v in report.aggregate().items()}))
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    ckpt = _existing(args.checkpoint, cfg, "checkpoint", "--checkpoint")
    thr = _existing(args.thresholds, cfg, "thresholds", "--thresholds")
    rec_path = _existing(args.record, cfg, "record", "--record")
    net, _ = SplitStreamNet.load(ckpt)
    ths = ThresholdSet.load(thr).thresholds
    record = load_record(rec_path)
    dets = []
    if record.duration >= net.config.segment_length:  # shorter records hold no complete segment
        record = condition_record(record)
        cand = predict_record(net, record, min(ths[k] for k in net.config.classes))
        dets = [d for k in net.config.classes for d in cand.detections(k, ths[k])]
    dets.sort(key=lambda d: (d.onset, d.label))
    doc = json.dumps({"record": record.id, "detections": [d.to_json() for d in dets]}, indent=1)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(doc + "\n")
    else:
        print(doc)
    return EXIT_OK


def cmd_compare(args, cfg) -> int:
    """Train the joint model and one single-event model per class on the
    same splits, then write a comparison table and the F1(theta) curves."""
    manifest = _existing(args.manifest, cfg, "manifest", "--manifest")
    seed = _seed(args, cfg)
    tcfg = train_config(cfg)
    iou_eval = float(cfg.get("iou_eval", IOU_EVAL))
    grid = theta_grid(cfg)
    max_seconds = cfg.get("train", {}).get("max_seconds")
    splits = {s: load_split(manifest, s) for s in ("train", "eval", "test")}
    out = Path(args.out)
    rows, curves = [], []
    runs = [("joint", None)] + [(f"single-{k}", k) for k in EVENT_CLASSES]
    for name, single in runs:
        mcfg = model_config(cfg, args.variant, single)
        log.info("training %s model", name)
        res = fit_and_score(splits, mcfg, tcfg, seed, iou_eval, grid, out / name, max_seconds)
        res.report.write(out / name)
        res.thresholds.save(out / name / "thresholds.json")
        for label, agg in res.report.aggregate().items():
            rows.append({"model": name, "class": label, "threshold": res.thresholds.thresholds[label],
                         **{f"{m}_{s}": agg[m][s] for m in ("precision", "recall", "f1") for s in ("mean", "sd")},
                         "r2": agg["r2"]})
        curves.append((name, res.curves))
    with open(out / "comparison.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    with open(out / "f1_curves.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "class", "theta", "f1"])
        for name, cv in curves:
            for label, curve in cv.items():
                for theta, v in zip(grid, curve):
                    w.writerow([name, label, f"{theta:.2f}", repr(float(v))])
    joint = {r["class"]: r["f1_mean"] for r in rows if r["model"] == "joint"}
    single = {r["class"]: r["f1_mean"] for r in rows if r["model"] != "joint"}
    summary = {k: {"joint_f1": joint[k], "single_f1": single[k], "joint_better": joint[k] > single[k]}
               for k in EVENT_CLASSES}
    (out / "comparison.json").write_text(json.dumps({"iou_eval": iou_eval, "rows": rows, "direction": summary},
                                                    indent=1) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sleepdetect", description=" ".join(__doc__.split("\n\n")[0].split()))
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the configuration seed")
        p.set_defaults(func=func)
        return p

    def model_flags(p):
        p.add_argument("--variant", choices=sorted(VARIANTS), default="splitstream",
                       help="head layout and weight decay (default: splitstream)")

    p = add("gen-data", cmd_gen_data, "generate a synthetic dataset with a 70/10/20 manifest")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", cmd_train, "train a detector on the train split, selecting epochs on the eval split")
    p.add_argument("--manifest", help="dataset manifest")
    model_flags(p)
    p.add_argument("--single-event", choices=EVENT_CLASSES, help="train a single-stream, single-class model")
    p.add_argument("--out", required=True, help="output directory for best.ckpt and train_log.jsonl")

    p = add("sweep-threshold", cmd_sweep, "choose per-class thresholds maximizing F1 on the eval split")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--out", required=True, help="output directory for thresholds.json and f1_curves.csv")

    p = add("evaluate", cmd_evaluate, "score a model on the test split")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--thresholds", help="thresholds.json from sweep-threshold")
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--workers", type=int, default=1, help="parallel record workers (default 1)")
    p.add_argument("--out", required=True, help="output directory for the report")

    p = add("predict", cmd_predict, "detect events in one record")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--thresholds", help="thresholds.json from sweep-threshold")
    p.add_argument("--record", help="record file")
    p.add_argument("--out", help="detections JSON path (stdout when omitted)")

    p = add("compare", cmd_compare, "train joint and single-event models and compare them on the test split")
    p.add_argument("--manifest", help="dataset manifest")
    model_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_run_config(args.config)
        return args.func(args, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
