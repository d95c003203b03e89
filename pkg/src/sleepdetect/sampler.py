"""Class-balanced random segment extraction for training."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .signal_io import Event, Record


@dataclass
class SegmentSample:
    x: np.ndarray  # C x T
    events: list[Event]  # segment-relative, clipped
    record_id: str
    start: float  # seconds


def segment_events(events: Sequence[Event], start: float, length: float, classes=None) -> list[Event]:
    """Events overlapping ``[start, start + length)``, shifted and clipped to it."""
    out = []
    for e in events:
        if classes is not None and e.label not in classes:
            continue
        lo, hi = max(e.onset, start), min(e.offset, start + length)
        if hi > lo:
            out.append(Event(e.label, lo - start, hi - lo))
    return out


def extract_segment(record: Record, events, start_idx: int, n_samples: int, classes=None) -> SegmentSample:
    start = start_idx / record.fs
    x = record.data[:, start_idx : start_idx + n_samples]
    return SegmentSample(x, segment_events(events, start, n_samples / record.fs, classes), record.id, start)


def sample_segment(
    record: Record,
    events: Sequence[Event],
    segment_length: float,
    rng: np.random.Generator,
    classes: Sequence[str] | None = None,
) -> SegmentSample:
    """Draw a training segment that contains the midpoint of a random event.

    A class is drawn uniformly among the classes present in the record, then
    an event uniformly within that class; the segment start is uniform over
    positions keeping the event midpoint inside the segment.
    """
    fs = record.fs
    n = int(round(segment_length * fs))
    if n > record.n_samples:
        raise ValueError(f"record {record.id!r} ({record.duration:.1f} s) shorter than segment ({segment_length} s)")
    pool = [e for e in events if classes is None or e.label in classes]
    present = sorted({e.label for e in pool}, key=lambda k: (classes or ("Ar", "LM", "SDB")).index(k))
    if not present:
        raise ValueError(f"record {record.id!r} has no events to sample from")
    label = present[rng.integers(len(present))]
    of_class = [e for e in pool if e.label == label]
    event = of_class[rng.integers(len(of_class))]

    lo = max(event.center - segment_length, 0.0)
    hi = min(event.center, record.duration - segment_length)
    first, last = math.ceil(lo * fs - 1e-9), math.floor(hi * fs + 1e-9)
    last = min(last, record.n_samples - n)
    start_idx = int(rng.integers(first, last + 1)) if last >= first else int(min(max(round(lo * fs), 0), record.n_samples - n))
    return extract_segment(record, events, start_idx, n, classes)


def batch_iterator(
    records: Sequence[tuple[Record, Sequence[Event]]],
    batch_size: int,
    segment_length: float,
    seed: int,
    steps: int,
    epoch: int = 0,
    classes: Sequence[str] | None = None,
) -> Iterator[list[SegmentSample]]:
    """Yield ``steps`` batches; records are drawn uniformly with replacement.

    The generator is derived from ``(seed, epoch)`` so each epoch is
    reproducible on its own.
    """
    if not records:
        raise ValueError("no records to sample from")
    rng = np.random.default_rng([seed, epoch])
    usable = [r for r in records if any(classes is None or e.label in classes for e in r[1])]
    if not usable:
        raise ValueError("no record contains events of the requested classes")
    for _ in range(steps):
        batch = []
        for _ in range(batch_size):
            rec, events = usable[rng.integers(len(usable))]
            batch.append(sample_segment(rec, events, segment_length, rng, classes))
        yield batch
