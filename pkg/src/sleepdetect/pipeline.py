"""Glue between on-disk datasets, model variants and the train/sweep/score steps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .conditioning import condition_record
from .evaluation import IOU_EVAL, THETA_GRID, ScoreReport, ThresholdSet, evaluate, predict_record, sweep_threshold
from .network.model import ModelConfig, SplitStreamNet
from .signal_io import STREAM_CHANNELS, load_annotations, load_manifest, load_record
from .training import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

VARIANTS = {
    "splitstream": ("dense", 0.0),
    "splitstream-wd": ("dense", 1e-4),
    "splitstream-dw": ("depthwise", 0.0),
    "splitstream-dw-wd": ("depthwise", 1e-4),
}


def variant_config(base: ModelConfig, variant: str = "splitstream", single_event: str | None = None) -> ModelConfig:
    """Model configuration for a named variant, optionally restricted to one
    event class (a single stream feeding a single-class detector)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    head, wd = VARIANTS[variant]
    cfg = replace(base, head=head, weight_decay=wd)
    if single_event is None:
        return cfg
    if single_event not in STREAM_CHANNELS:
        raise ValueError(f"unknown event class {single_event!r}")
    windows = {single_event: cfg.class_config.get(single_event)} if single_event in cfg.class_config else {}
    return replace(cfg, streams=(single_event,), classes=(single_event,), class_config=windows,
                   stream_channels={single_event: STREAM_CHANNELS[single_event]})


def load_split(manifest_path, split: str) -> list:
    """Conditioned ``(Record, events)`` pairs of one manifest split."""
    manifest = load_manifest(manifest_path)
    out = []
    for rec_path, ann_path in manifest.subset(split):
        record = condition_record(load_record(rec_path))
        out.append((record, load_annotations(ann_path, record.duration)))
    if not out:
        raise ValueError(f"split {split!r} of {manifest_path} is empty")
    return out


@dataclass
class ExperimentResult:
    train: TrainResult
    thresholds: ThresholdSet
    curves: dict
    report: ScoreReport


def fit_and_score(splits: dict, cfg: ModelConfig, tcfg: TrainConfig, seed: int = 0, iou_eval: float = IOU_EVAL,
                  grid=THETA_GRID, out_dir=None, max_seconds: float | None = None) -> ExperimentResult:
    """Train on ``splits['train']``, pick thresholds on ``'eval'``, score ``'test'``."""
    res = train(splits["train"], splits["eval"], cfg, tcfg, seed=seed, out_dir=out_dir, max_seconds=max_seconds)
    ths, curves = sweep_on(res.net, splits["eval"], iou_eval, grid)
    report = evaluate(res.net, ths, splits["test"], iou_eval)
    return ExperimentResult(res, ths, curves, report)


def sweep_on(net: SplitStreamNet, records, iou_eval: float = IOU_EVAL, grid=THETA_GRID):
    cands = [predict_record(net, r, float(min(grid))) for r, _ in records]
    return sweep_threshold(cands, [e for _, e in records], net.config.classes, grid, iou_eval)


def checkpoint_path(out_dir) -> Path:
    return Path(out_dir) / "best.ckpt"
