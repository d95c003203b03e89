"""Event-level scoring, threshold selection, indices and timing errors."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import Detection, decode_predictions, iou_matrix, nms_indices
from .network.model import SplitStreamNet
from .signal_io import Event, Record

INDEX_NAMES = {"Ar": "ArI", "LM": "LMI", "SDB": "AHI"}
THETA_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)
IOU_EVAL = 0.3


# -- matching and counts ---------------------------------------------------------


@dataclass
class ScoringMatch:
    pairs: list[tuple[int, int]]  # (prediction index, truth index)
    false_positives: list[int]
    false_negatives: list[int]

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.pairs), len(self.false_positives), len(self.false_negatives)


def match_for_scoring(pred: Sequence[Detection], truth: Sequence[Event], iou_eval: float = IOU_EVAL) -> ScoringMatch:
    """One-to-one greedy matching of same-class pairs by descending IoU.

    Only pairs with IoU >= ``iou_eval`` are eligible; ties are resolved by
    prediction index, then truth index.
    """
    if not 0 < iou_eval <= 1:
        raise ValueError("iou_eval must lie in (0, 1]")
    pairs = []
    if pred and truth:
        m = iou_matrix([p.center for p in pred], [p.duration for p in pred],
                       [t.center for t in truth], [t.duration for t in truth])
        same = np.array([[p.label == t.label for t in truth] for p in pred])
        m = np.where(same, m, 0.0)
        pi, ti = np.nonzero(m >= iou_eval)
        order = np.lexsort((ti, pi, -m[pi, ti]))
        used_p, used_t = set(), set()
        for i in order:
            a, b = int(pi[i]), int(ti[i])
            if a not in used_p and b not in used_t:
                pairs.append((a, b))
                used_p.add(a)
                used_t.add(b)
    matched_p = {a for a, _ in pairs}
    matched_t = {b for _, b in pairs}
    return ScoringMatch(
        sorted(pairs),
        [i for i in range(len(pred)) if i not in matched_p],
        [i for i in range(len(truth)) if i not in matched_t],
    )


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1.

    A record with neither predictions nor truths scores (1, 1, 1); otherwise
    an empty denominator gives 0.
    """
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def compute_index(events, hours: float) -> float:
    """Events per hour; ``events`` may be a count or a sequence."""
    if not hours > 0:
        raise ValueError("duration must be positive")
    n = events if isinstance(events, (int, np.integer)) else len(events)
    return n / hours


def pearson_r2(x, y) -> float:
    """Squared Pearson correlation; NaN when either input is constant."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("need at least three paired values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = (dx * dx).sum(), (dy * dy).sum()
    if sxx == 0 or syy == 0:
        return math.nan
    return float((dx * dy).sum() ** 2 / (sxx * syy))


@dataclass(frozen=True)
class TemporalErrorSample:
    d_onset: float
    d_offset: float
    d_dur: float


def temporal_errors(pairs: Sequence[tuple[Detection, Event]]) -> list[TemporalErrorSample]:
    """Signed onset/offset/duration errors, prediction minus truth.

    The duration error is taken as offset error minus onset error so the
    identity between the three holds exactly.
    """
    out = []
    for p, t in pairs:
        d_on = p.onset - t.onset
        d_off = p.offset - t.offset
        out.append(TemporalErrorSample(d_on, d_off, d_off - d_on))
    return out


def error_summary(samples: Sequence[TemporalErrorSample]) -> dict:
    if not samples:
        return {}
    arr = np.array([[s.d_onset, s.d_offset, s.d_dur] for s in samples])
    q = np.quantile(arr, [0.05, 0.25, 0.5, 0.75, 0.95], axis=0)
    return {
        name: {"mean": float(arr[:, i].mean()), "sd": float(arr[:, i].std()),
               "quantiles": dict(zip(("q05", "q25", "q50", "q75", "q95"), map(float, q[:, i])))}
        for i, name in enumerate(("d_onset", "d_offset", "d_dur"))
    }


# -- whole-record inference --------------------------------------------------------


@dataclass
class Candidates:
    """Per-class window predictions of a whole record, in record time."""

    centers: dict
    durations: dict
    probs: dict

    def detections(self, label: str, threshold: float, nms_iou: float = 0.5) -> list[Detection]:
        c, d, p = self.centers[label], self.durations[label], self.probs[label]
        keep = nms_indices(c, d, p, threshold, nms_iou)
        dets = [Detection(label, float(p[i]), float(c[i]), float(d[i])) for i in keep]
        return sorted(dets, key=lambda e: e.center)


def segment_starts(n_samples: int, seg: int) -> list[int]:
    """Starts of half-overlapping segments; the last one is aligned to the end."""
    if n_samples < seg:
        return []
    starts = list(range(0, n_samples - seg + 1, seg // 2))
    if starts[-1] != n_samples - seg:
        starts.append(n_samples - seg)
    return starts


def predict_record(net: SplitStreamNet, record: Record, floor: float = 0.0, batch: int = 16) -> Candidates:
    """Run the model over half-overlapping segments of a conditioned record.

    Window predictions with class probability at or below ``floor`` are
    discarded early.
    """
    cfg, grid = net.config, net.grid
    seg = cfg.n_samples
    starts = segment_starts(record.n_samples, seg)
    acc = {k: ([], [], []) for k in cfg.classes}
    for i in range(0, len(starts), batch):
        chunk = starts[i : i + batch]
        x = np.stack([record.data[:, s : s + seg] for s in chunk])
        out = net.forward(net.split_inputs(x, record.channels), training=False)[0]
        probs = out.probabilities
        for b, s in enumerate(chunk):
            centers, durations = decode_predictions(out.y[b], grid)
            p_own = probs[b, np.arange(grid.n_windows), grid.labels]
            for k, label in enumerate(cfg.classes, start=1):
                sel = (grid.labels == k) & (p_own > floor)
                acc[label][0].append(centers[sel] + s / record.fs)
                acc[label][1].append(durations[sel])
                acc[label][2].append(p_own[sel])
    cat = {k: [np.concatenate(v) if v else np.zeros(0) for v in acc[k]] for k in acc}
    return Candidates({k: v[0] for k, v in cat.items()}, {k: v[1] for k, v in cat.items()},
                      {k: v[2] for k, v in cat.items()})


# -- thresholds -----------------------------------------------------------------------


@dataclass
class ThresholdSet:
    thresholds: dict

    def __post_init__(self):
        for k, v in self.thresholds.items():
            if not 0 <= v <= 1:
                raise ValueError(f"threshold for {k} outside [0, 1]")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.thresholds, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ThresholdSet":
        return cls({k: float(v) for k, v in json.loads(Path(path).read_text()).items()})


def f1_curve(cands: Sequence[Candidates], truths: Sequence[Sequence[Event]], label: str, grid, iou_eval: float) -> np.ndarray:
    """Mean per-record F1 of class ``label`` at each threshold of ``grid``."""
    curve = []
    for theta in grid:
        scores = []
        for cand, truth in zip(cands, truths):
            dets = cand.detections(label, theta)
            tr = [e for e in truth if e.label == label]
            scores.append(prf1(*match_for_scoring(dets, tr, iou_eval).counts)[2])
        curve.append(float(np.mean(scores)))
    return np.array(curve)


def sweep_threshold(cands, truths, classes, grid=THETA_GRID, iou_eval: float = IOU_EVAL):
    """Per-class threshold maximizing mean F1 (ties go to the smaller threshold).

    Returns the :class:`ThresholdSet` and the curves as ``{label: array}``.
    """
    if not cands:
        raise ValueError("empty evaluation split")
    curves, best = {}, {}
    for label in classes:
        curve = f1_curve(cands, truths, label, grid, iou_eval)
        curves[label] = curve
        best[label] = float(grid[int(np.argmax(curve))])
    return ThresholdSet(best), curves


# -- reports -------------------------------------------------------------------------


@dataclass
class ScoredRecord:
    record_id: str
    hours: float
    counts: dict  # label -> (tp, fp, fn)
    scores: dict  # label -> (precision, recall, f1)
    true_index: dict
    pred_index: dict
    errors: dict  # label -> list of TemporalErrorSample


@dataclass
class ScoreReport:
    iou_eval: float
    thresholds: dict
    records: list[ScoredRecord]
    classes: tuple
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        out = {}
        for label in self.classes:
            s = np.array([r.scores[label] for r in self.records])
            tp, fp, fn = np.array([r.counts[label] for r in self.records]).sum(axis=0)
            true_idx = [r.true_index[label] for r in self.records]
            pred_idx = [r.pred_index[label] for r in self.records]
            r2 = pearson_r2(true_idx, pred_idx) if len(self.records) >= 3 else math.nan
            errs = [e for r in self.records for e in r.errors[label]]
            out[label] = {
                "precision": {"mean": float(s[:, 0].mean()), "sd": float(s[:, 0].std())},
                "recall": {"mean": float(s[:, 1].mean()), "sd": float(s[:, 1].std())},
                "f1": {"mean": float(s[:, 2].mean()), "sd": float(s[:, 2].std())},
                "pooled": dict(zip(("precision", "recall", "f1"), prf1(int(tp), int(fp), int(fn)))),
                "index": INDEX_NAMES.get(label, label),
                "r2": r2,
                "temporal_errors": error_summary(errs),
                "n_matched": len(errs),
            }
        return out

    def to_json(self) -> dict:
        return {
            "iou_eval": self.iou_eval,
            "thresholds": self.thresholds,
            "workers": self.workers,
            "aggregate": self.aggregate(),
            "records": [
                {
                    "id": r.record_id,
                    "hours": r.hours,
                    "classes": {
                        k: {
                            "tp": r.counts[k][0], "fp": r.counts[k][1], "fn": r.counts[k][2],
                            "precision": r.scores[k][0], "recall": r.scores[k][1], "f1": r.scores[k][2],
                            "true_index": r.true_index[k], "pred_index": r.pred_index[k],
                        }
                        for k in self.classes
                    },
                }
                for r in self.records
            ],
            **self.extra,
        }

    def write(self, out_dir) -> None:
        """JSON summary plus index-pair and temporal-error CSV tables."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=1, allow_nan=True) + "\n")
        with open(out / "index_pairs.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["record", "class", "index", "true", "predicted"])
            for r in self.records:
                for k in self.classes:
                    w.writerow([r.record_id, k, INDEX_NAMES.get(k, k), r.true_index[k], r.pred_index[k]])
        with open(out / "temporal_errors.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["record", "class", "d_onset", "d_offset", "d_dur"])
            for r in self.records:
                for k in self.classes:
                    for e in r.errors[k]:
                        w.writerow([r.record_id, k, repr(e.d_onset), repr(e.d_offset), repr(e.d_dur)])


def write_curves(curves: Mapping[str, np.ndarray], grid, path, model: str = "joint") -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "class", "theta", "f1"])
        for k, curve in curves.items():
            for theta, v in zip(grid, curve):
                w.writerow([model, k, f"{theta:.2f}", repr(float(v))])


def score_record(record_id: str, hours: float, cand: Candidates, truth: Sequence[Event], thresholds: Mapping[str, float],
                 classes, iou_eval: float = IOU_EVAL) -> ScoredRecord:
    counts, scores, t_idx, p_idx, errors = {}, {}, {}, {}, {}
    for label in classes:
        dets = cand.detections(label, thresholds[label])
        tr = [e for e in truth if e.label == label]
        m = match_for_scoring(dets, tr, iou_eval)
        counts[label] = m.counts
        scores[label] = prf1(*m.counts)
        t_idx[label] = compute_index(tr, hours)
        p_idx[label] = compute_index(dets, hours)
        errors[label] = temporal_errors([(dets[a], tr[b]) for a, b in m.pairs])
    return ScoredRecord(record_id, hours, counts, scores, t_idx, p_idx, errors)


def evaluate(net: SplitStreamNet, thresholds: ThresholdSet, records, iou_eval: float = IOU_EVAL, workers: int = 1) -> ScoreReport:
    """Score a model on ``(conditioned Record, events)`` pairs."""
    classes = net.config.classes
    jobs = [(net, record, events, thresholds.thresholds, iou_eval) for record, events in records]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            scored = list(pool.map(_score_job, jobs))
    else:
        scored = [_score_job(j) for j in jobs]
    scored.sort(key=lambda r: r.record_id)
    return ScoreReport(iou_eval, dict(thresholds.thresholds), scored, classes, workers)


def _score_job(job) -> ScoredRecord:
    net, record, events, thresholds, iou_eval = job
    classes = net.config.classes
    cand = predict_record(net, record, min(thresholds[k] for k in classes))
    return score_record(record.id, record.duration / 3600, cand, events, thresholds, classes, iou_eval)
