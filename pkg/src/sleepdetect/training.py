"""Detection loss with hard negative mining, Adam, and epoch-level schedules."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import MatchResult, match_events
from .network.layers import log_softmax
from .network.model import ModelConfig, SplitStreamNet, model_init
from .sampler import SegmentSample, batch_iterator

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 1e-3
    eps: float = 1e-8
    lr_patience: int = 3
    lr_factor: float = 0.1
    stop_patience: int = 10
    neg_ratio: int = 3
    match_iou: float = 0.5
    batch_size: int = 8
    steps_per_epoch: int = 200
    max_epochs: int = 30
    eval_segments: int = 100

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


# -- loss ------------------------------------------------------------------------


def huber(r):
    r = np.asarray(r, dtype=np.float64)
    a = np.abs(r)
    return np.where(a < 1, 0.5 * r * r, a - 0.5)


def huber_grad(r):
    return np.clip(np.asarray(r, dtype=np.float64), -1.0, 1.0)


def localization_loss(y, t):
    """Mean over positive windows of the Huber loss summed over both coordinates."""
    y, t = np.asarray(y, float), np.asarray(t, float)
    if len(y) == 0:
        return 0.0
    return float(huber(y - t).sum() / len(y))


def positive_class_loss(s, onehot):
    """Mean negative log-likelihood of the target class over positive windows."""
    s = np.asarray(s, float)
    if len(s) == 0:
        return 0.0
    return float(-(onehot * log_softmax(s)).sum() / len(s))


def select_hard_negatives(s_unmatched, n_pos: int, ratio: int = 3) -> np.ndarray:
    """Positions (into ``s_unmatched``) of the ``ratio * n_pos`` windows with the
    lowest negative-class probability; ties go to the earlier window."""
    n_sel = min(ratio * n_pos, len(s_unmatched))
    if n_sel == 0:
        return np.zeros(0, dtype=int)
    logp_neg = log_softmax(np.asarray(s_unmatched, float))[:, 0]
    return np.argsort(logp_neg, kind="stable")[:n_sel]


def hard_negative_loss(s_unmatched, n_pos: int, ratio: int = 3) -> float:
    sel = select_hard_negatives(s_unmatched, n_pos, ratio)
    if len(sel) == 0:
        return 0.0
    return float(-log_softmax(np.asarray(s_unmatched, float)[sel])[:, 0].mean())


@dataclass
class LossBreakdown:
    loc: float
    plus: float
    minus: float
    n_pos: int
    negatives: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def total(self) -> float:
        return self.loc + self.plus + self.minus


def total_loss(s, y, match: MatchResult, ratio: int = 3, with_grad: bool = False):
    """Loss of one segment (``s``: N_d x K, ``y``: N_d x 2).

    Returns the breakdown and, if ``with_grad``, the gradients w.r.t. ``s``
    and ``y``.  Segments without positive windows contribute nothing.
    """
    n_pos = match.n_matched
    ds, dy = np.zeros_like(s), np.zeros_like(y)
    if n_pos == 0:
        out = LossBreakdown(0.0, 0.0, 0.0, 0)
        return (out, ds, dy) if with_grad else out
    pos = match.windows
    r = y[pos] - match.targets
    loc = float(huber(r).sum() / n_pos)
    logp_pos = log_softmax(s[pos])
    plus = float(-(match.onehot * logp_pos).sum() / n_pos)
    neg_windows = match.unmatched[select_hard_negatives(s[match.unmatched], n_pos, ratio)]
    if len(neg_windows):
        logp_neg = log_softmax(s[neg_windows])
        minus = float(-logp_neg[:, 0].mean())
    else:
        minus = 0.0
    out = LossBreakdown(loc, plus, minus, n_pos, neg_windows)
    if not with_grad:
        return out
    dy[pos] = huber_grad(r) / n_pos
    ds[pos] = (np.exp(logp_pos) - match.onehot) / n_pos
    if len(neg_windows):
        g = np.exp(logp_neg)
        g[:, 0] -= 1.0
        ds[neg_windows] = g / len(neg_windows)
    return out, ds, dy


# -- optimizer and schedules -----------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3

    @classmethod
    def zeros_like(cls, params: dict, lr: float = 1e-3) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()}, 0, lr)


def adam_step(params: dict, grads: dict, state: AdamState, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0) -> None:
    """In-place bias-corrected Adam update of ``params``.

    Weight decay is decoupled: ``lr * weight_decay * theta`` is subtracted
    after the moment-based step.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k} at step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            step = step + state.lr * weight_decay * params[k]
        params[k] -= step


class PlateauDecay:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without a new best loss; the counter restarts on improvement or decay."""

    def __init__(self, lr: float, patience: int = 3, factor: float = 0.1):
        self.lr, self.patience, self.factor = lr, patience, factor
        self.best = math.inf
        self.bad = 0

    def update(self, loss: float) -> bool:
        if loss < self.best:
            self.best, self.bad = loss, 0
            return False
        self.bad += 1
        if self.bad >= self.patience:
            self.lr *= self.factor
            self.bad = 0
            return True
        return False


def lr_plateau_update(history: Sequence[float], lr: float, patience: int = 3, factor: float = 0.1) -> float:
    """Learning rate after replaying ``history`` through :class:`PlateauDecay`."""
    if not history:
        raise ValueError("empty loss history")
    sched = PlateauDecay(lr, patience, factor)
    for loss in history:
        sched.update(loss)
    return sched.lr


class EarlyStopping:
    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, loss: float, epoch: int) -> bool:
        """Record an epoch; True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad = loss, epoch, 0
        else:
            self.bad += 1
        return self.bad >= self.patience


def early_stopping_update(history: Sequence[float], patience: int = 10) -> str:
    if not history:
        raise ValueError("empty loss history")
    stopper = EarlyStopping(patience)
    for epoch, loss in enumerate(history):
        if stopper.update(loss, epoch):
            return "stop"
    return "continue"


# -- training loop ---------------------------------------------------------------


def batch_loss(net: SplitStreamNet, batch: Sequence[SegmentSample], tcfg: TrainConfig, training=True, with_grad=True):
    """Mean segment loss over a batch, plus parameter gradients if requested."""
    grid = net.grid
    x = np.stack([b.x for b in batch])
    out, cache = net.forward(net.split_inputs(x), training=training)
    ds, dy = np.zeros_like(out.s), np.zeros_like(out.y)
    parts = []
    for i, sample in enumerate(batch):
        match = match_events(sample.events, grid, tcfg.match_iou)
        res = total_loss(out.s[i], out.y[i], match, tcfg.neg_ratio, with_grad=with_grad)
        if with_grad:
            res, ds[i], dy[i] = res
        parts.append(res)
    n = len(batch)
    mean = {
        "loc": sum(p.loc for p in parts) / n,
        "plus": sum(p.plus for p in parts) / n,
        "minus": sum(p.minus for p in parts) / n,
    }
    mean["total"] = mean["loc"] + mean["plus"] + mean["minus"]
    if not with_grad:
        return mean, None
    return mean, net.backward(cache, ds / n, dy / n)


def fixed_segments(records, tcfg: TrainConfig, cfg: ModelConfig, seed: int) -> list[SegmentSample]:
    """Deterministic set of evaluation segments."""
    it = batch_iterator(records, tcfg.eval_segments, cfg.segment_length, seed, 1, classes=cfg.classes)
    return next(it)


def evaluate_loss(net: SplitStreamNet, segments, tcfg: TrainConfig, chunk: int = 16) -> float:
    total = 0.0
    for i in range(0, len(segments), chunk):
        part = segments[i : i + chunk]
        mean, _ = batch_loss(net, part, tcfg, training=False, with_grad=False)
        total += mean["total"] * len(part)
    return total / len(segments)


@dataclass
class TrainResult:
    net: SplitStreamNet
    best_epoch: int
    history: list
    log_path: str | None = None


def train(
    train_records,
    eval_records,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed: int = 0,
    out_dir=None,
    max_seconds: float | None = None,
) -> TrainResult:
    """Fit a model and return the parameters of the best evaluation epoch.

    ``train_records``/``eval_records`` are lists of ``(conditioned Record,
    events)``.  With ``out_dir`` the best checkpoint is written to
    ``best.ckpt`` and a JSON-lines log to ``train_log.jsonl``.
    """
    if not train_records or not eval_records:
        raise ValueError("train and eval splits must be non-empty")
    net = model_init(cfg, seed)
    adam = AdamState.zeros_like(net.params, tcfg.lr)
    sched = PlateauDecay(tcfg.lr, tcfg.lr_patience, tcfg.lr_factor)
    stopper = EarlyStopping(tcfg.stop_patience)
    eval_set = fixed_segments(eval_records, tcfg, cfg, seed + 1)
    out_dir = Path(out_dir) if out_dir else None
    logf = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        logf = open(out_dir / "train_log.jsonl", "w")
    best = None
    history = []
    t0 = time.perf_counter()
    try:
        for epoch in range(tcfg.max_epochs):
            batches = batch_iterator(
                train_records, tcfg.batch_size, cfg.segment_length, seed, tcfg.steps_per_epoch, epoch, cfg.classes
            )
            for step, batch in enumerate(batches):
                mean, grads = batch_loss(net, batch, tcfg)
                if not math.isfinite(mean["total"]):
                    raise FloatingPointError(f"loss diverged at epoch {epoch} step {step}: {mean}")
                adam_step(net.params, grads, adam, tcfg.beta1, tcfg.beta2, tcfg.eps, cfg.weight_decay)
                if logf:
                    logf.write(json.dumps({"epoch": epoch, "step": step, **mean, "lr": adam.lr}) + "\n")
            eval_loss = evaluate_loss(net, eval_set, tcfg)
            decayed = sched.update(eval_loss)
            adam.lr = sched.lr
            stop = stopper.update(eval_loss, epoch)
            if stopper.best_epoch == epoch:
                best = ({k: v.copy() for k, v in net.params.items()}, {k: v.copy() for k, v in net.state.items()})
                if out_dir:
                    SplitStreamNet(cfg, *best).save(out_dir / "best.ckpt", seed=seed, epoch=epoch)
            elapsed = time.perf_counter() - t0
            out_of_time = max_seconds is not None and elapsed > max_seconds
            record = {"epoch": epoch, "eval_loss": eval_loss, "decayed": decayed, "stopped": stop or out_of_time,
                      "lr": adam.lr, "elapsed": elapsed}
            history.append(record)
            log.info("epoch %d eval loss %.4f lr %.1e (%.0f s)", epoch, eval_loss, adam.lr, elapsed)
            if logf:
                logf.write(json.dumps(record) + "\n")
                logf.flush()
            if stop or out_of_time:
                break
    finally:
        if logf:
            logf.close()
    net = SplitStreamNet(cfg, *best)
    return TrainResult(net, stopper.best_epoch, history, str(out_dir / "train_log.jsonl") if out_dir else None)
