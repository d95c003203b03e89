"""Default event windows, interval IoU, matching, target coding and NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .signal_io import Event

# Window duration per class (s); stride defaults to half the duration.
DEFAULT_WINDOWS = {"Ar": 15.0, "LM": 3.0, "SDB": 30.0}
MIN_DURATION = 0.1
_LOG_CLIP = 30.0


def default_class_config(classes: Sequence[str] = ("Ar", "LM", "SDB")) -> dict[str, tuple[float, float]]:
    return {k: (DEFAULT_WINDOWS[k], DEFAULT_WINDOWS[k] / 2) for k in classes}


@dataclass(frozen=True)
class WindowGrid:
    """Class-major set of default windows for one segment.

    ``labels`` holds the 1-based class index of each window (0 is reserved
    for the negative class).
    """

    classes: tuple[str, ...]
    centers: np.ndarray
    durations: np.ndarray
    labels: np.ndarray
    segment_length: float

    @property
    def n_windows(self) -> int:
        return len(self.centers)

    @property
    def n_classes(self) -> int:
        """K, including the negative class."""
        return len(self.classes) + 1

    def class_index(self, label: str) -> int:
        return self.classes.index(label) + 1

    def windows_of(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def generate_default_windows(segment_length: float, class_config: Mapping[str, tuple[float, float]]) -> WindowGrid:
    if not class_config:
        raise ValueError("class_config is empty")
    centers, durations, labels = [], [], []
    for k, (label, (dur, stride)) in enumerate(class_config.items(), start=1):
        if not 0 < dur <= segment_length + 1e-9:
            raise ValueError(f"window duration {dur} for {label} must lie in (0, {segment_length}]")
        if not stride > 0:
            raise ValueError(f"stride for {label} must be positive")
        n = int(math.floor((segment_length - dur) / stride + 1e-9)) + 1
        centers.append(dur / 2 + stride * np.arange(n))
        durations.append(np.full(n, float(dur)))
        labels.append(np.full(n, k))
    return WindowGrid(
        tuple(class_config),
        np.concatenate(centers),
        np.concatenate(durations),
        np.concatenate(labels),
        float(segment_length),
    )


def iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """IoU of two ``(center, duration)`` intervals."""
    (ca, da), (cb, db) = a, b
    lo_a, hi_a, lo_b, hi_b = ca - da / 2, ca + da / 2, cb - db / 2, cb + db / 2
    inter = min(hi_a, hi_b) - max(lo_a, lo_b)
    if inter <= 0:
        return 0.0
    # for overlapping intervals the union is their hull, which keeps IoU <= 1 under rounding
    return inter / (max(hi_a, hi_b) - min(lo_a, lo_b))


def iou_matrix(c1, d1, c2, d2) -> np.ndarray:
    """Pairwise IoU between two interval sets, shape ``(len(c1), len(c2))``."""
    c1, d1 = np.asarray(c1, float)[:, None], np.asarray(d1, float)[:, None]
    c2, d2 = np.asarray(c2, float)[None, :], np.asarray(d2, float)[None, :]
    lo1, hi1, lo2, hi2 = c1 - d1 / 2, c1 + d1 / 2, c2 - d2 / 2, c2 + d2 / 2
    inter = np.maximum(np.minimum(hi1, hi2) - np.maximum(lo1, lo2), 0.0)
    return inter / (np.maximum(hi1, hi2) - np.minimum(lo1, lo2))


@dataclass(frozen=True)
class MatchResult:
    windows: np.ndarray  # matched window indices, ascending
    events: np.ndarray  # matched event index per window
    onehot: np.ndarray  # N_m x K
    targets: np.ndarray  # N_m x 2
    unmatched: np.ndarray
    labels: np.ndarray  # class index per window, 0 where unmatched

    @property
    def n_matched(self) -> int:
        return len(self.windows)


def assign_windows(events: Sequence[Event], grid: WindowGrid, threshold: float = 0.5) -> np.ndarray:
    """Event index assigned to each window, -1 where none.

    A window takes the same-class event of highest IoU when that IoU reaches
    ``threshold``.  Every event then claims its best window regardless of
    the threshold; when several events claim one window the highest IoU wins.
    Ties go to the lower index throughout.
    """
    assign = np.full(grid.n_windows, -1)
    if not events:
        return assign
    ev_c = np.array([e.center for e in events])
    ev_d = np.array([e.duration for e in events])
    ev_k = np.array([grid.class_index(e.label) for e in events])
    m = iou_matrix(grid.centers, grid.durations, ev_c, ev_d)
    m[grid.labels[:, None] != ev_k[None, :]] = 0.0

    best_event = m.argmax(axis=1)
    ok = m[np.arange(grid.n_windows), best_event] >= threshold
    assign[ok] = best_event[ok]

    best_window = m.argmax(axis=0)
    best_iou = m[best_window, np.arange(len(events))]
    # weakest claims first so the strongest claim on a shared window wins
    for i in sorted(range(len(events)), key=lambda i: (best_iou[i], -i)):
        if best_iou[i] > 0:
            assign[best_window[i]] = i
    return assign


def encode_targets(event_centers, event_durations, window_centers, window_durations) -> np.ndarray:
    """Relative center offset and log duration ratio, shape ``(N, 2)``."""
    ec, ed = np.asarray(event_centers, float), np.asarray(event_durations, float)
    wc, wd = np.asarray(window_centers, float), np.asarray(window_durations, float)
    return np.stack([(ec - wc) / wd, np.log(ed / wd)], axis=-1).reshape(-1, 2)


def match_events(events: Sequence[Event], grid: WindowGrid, threshold: float = 0.5) -> MatchResult:
    assign = assign_windows(events, grid, threshold)
    windows = np.flatnonzero(assign >= 0)
    ev = assign[windows]
    labels = np.zeros(grid.n_windows, dtype=int)
    onehot = np.zeros((len(windows), grid.n_classes))
    if len(windows):
        k = np.array([grid.class_index(events[i].label) for i in ev])
        labels[windows] = k
        onehot[np.arange(len(windows)), k] = 1.0
        targets = encode_targets(
            [events[i].center for i in ev],
            [events[i].duration for i in ev],
            grid.centers[windows],
            grid.durations[windows],
        )
    else:
        targets = np.zeros((0, 2))
    return MatchResult(windows, ev, onehot, targets, np.flatnonzero(assign < 0), labels)


def decode_predictions(y: np.ndarray, grid: WindowGrid, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Invert the target coding: per-window ``(centers, durations)`` in seconds."""
    y = np.asarray(y, dtype=np.float64)
    centers = grid.centers + y[:, 0] * grid.durations
    durations = grid.durations * np.exp(np.clip(y[:, 1], -_LOG_CLIP, _LOG_CLIP))
    if clamp:
        durations = np.clip(durations, MIN_DURATION, grid.segment_length)
    return centers, durations


@dataclass(frozen=True)
class Detection:
    label: str
    probability: float
    center: float
    duration: float

    @property
    def onset(self) -> float:
        return self.center - self.duration / 2

    @property
    def offset(self) -> float:
        return self.center + self.duration / 2

    def to_json(self) -> dict:
        return {"class": self.label, "probability": self.probability, "onset": self.onset, "duration": self.duration}


def nms_indices(centers, durations, probs, threshold: float, nms_iou: float = 0.5) -> np.ndarray:
    """Indices kept by greedy NMS among candidates with probability above ``threshold``.

    Candidates are visited by descending probability (ties by index); the
    result is in visiting order.
    """
    probs = np.asarray(probs, float)
    cand = np.flatnonzero(probs > threshold)
    if len(cand) == 0:
        return cand
    cand = cand[np.argsort(-probs[cand], kind="stable")]
    c = np.asarray(centers, float)[cand]
    d = np.asarray(durations, float)[cand]
    lo, hi = c - d / 2, c + d / 2
    alive = np.ones(len(cand), dtype=bool)
    keep = []
    for i in range(len(cand)):
        if not alive[i]:
            continue
        keep.append(cand[i])
        inter = np.maximum(np.minimum(hi[i], hi[i + 1 :]) - np.maximum(lo[i], lo[i + 1 :]), 0.0)
        overlap = inter / (np.maximum(hi[i], hi[i + 1 :]) - np.minimum(lo[i], lo[i + 1 :]))
        alive[i + 1 :] &= overlap < nms_iou
    return np.array(keep, dtype=int)


def nms(candidates: Sequence[Detection], threshold: float, nms_iou: float = 0.5) -> list[Detection]:
    """Greedy NMS over one class; output sorted by center."""
    if not candidates:
        return []
    keep = nms_indices(
        [c.center for c in candidates],
        [c.duration for c in candidates],
        [c.probability for c in candidates],
        threshold,
        nms_iou,
    )
    return sorted((candidates[i] for i in keep), key=lambda c: c.center)
