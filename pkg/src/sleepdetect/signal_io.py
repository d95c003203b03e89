"""Record, annotation and manifest storage.

A record file is a 4-byte little-endian header length, a UTF-8 JSON header
(``id``, ``fs``, ``channels``, ``lengths``) and then one contiguous
little-endian float32 block per channel in header order.  Annotations are a
JSON array of ``{"class", "onset", "duration"}`` objects in seconds.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EVENT_CLASSES = ("Ar", "LM", "SDB")
SPLITS = ("train", "eval", "test")

# Expected channel set and its assignment to the three detection streams.
CHANNELS = ("C3", "C4", "EOGL", "EOGR", "Chin", "LegL", "LegR", "Nasal", "Thor", "Abdo")
STREAM_CHANNELS = {
    "Ar": ("C3", "C4", "EOGL", "EOGR", "Chin"),
    "LM": ("LegL", "LegR"),
    "SDB": ("Nasal", "Thor", "Abdo"),
}

_HEADER_LEN = struct.Struct("<I")


class FormatError(ValueError):
    """Raised when a record, annotation or manifest file is malformed."""


@dataclass(frozen=True)
class Event:
    label: str
    onset: float
    duration: float

    def __post_init__(self):
        if self.label not in EVENT_CLASSES:
            raise ValueError(f"unknown event class {self.label!r}")
        if not self.duration > 0:
            raise ValueError(f"event duration must be positive, got {self.duration}")
        if self.onset < 0:
            raise ValueError(f"event onset must be non-negative, got {self.onset}")

    @property
    def center(self) -> float:
        return self.onset + self.duration / 2

    @property
    def offset(self) -> float:
        return self.onset + self.duration

    def to_json(self) -> dict:
        return {"class": self.label, "onset": self.onset, "duration": self.duration}


@dataclass
class Record:
    """Multichannel signal with one row per named channel."""

    id: str
    channels: tuple[str, ...]
    data: np.ndarray  # C x T
    fs: float

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise ValueError("data must be a C x T matrix with one row per channel")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel names must be unique")
        if not self.fs > 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.channels.index(name)]

    def select(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.channels]
        if missing:
            raise KeyError(f"record {self.id!r} is missing channels {missing}")
        return self.data[[self.channels.index(n) for n in names]]


def _header_bytes(record: Record) -> bytes:
    header = {
        "id": record.id,
        "fs": float(record.fs),
        "channels": list(record.channels),
        "lengths": [record.n_samples] * len(record.channels),
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_record(record: Record, path) -> None:
    header = _header_bytes(record)
    blocks = np.ascontiguousarray(record.data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER_LEN.pack(len(header)))
        f.write(header)
        f.write(blocks.tobytes())


def load_record(path) -> Record:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for header length at offset 0")
    (hlen,) = _HEADER_LEN.unpack_from(raw, 0)
    if 4 + hlen > len(raw):
        raise FormatError(f"{path}: header length {hlen} at offset 0 exceeds file size {len(raw)}")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed JSON header at offset 4: {exc}") from None
    for key in ("id", "fs", "channels", "lengths"):
        if key not in header:
            raise FormatError(f"{path}: header (offset 4) lacks field {key!r}")
    fs = header["fs"]
    if not isinstance(fs, (int, float)) or not fs > 0:
        raise FormatError(f"{path}: non-positive sampling rate {fs!r} in header at offset 4")
    names, lengths = header["channels"], header["lengths"]
    if len(names) != len(lengths):
        raise FormatError(f"{path}: {len(names)} channel names but {len(lengths)} lengths in header")
    if len(set(lengths)) > 1:
        raise FormatError(f"{path}: channel-length mismatch {lengths} in header at offset 4")
    pos = 4 + hlen
    expected = pos + 4 * sum(lengths)
    if expected != len(raw):
        raise FormatError(
            f"{path}: data section at offset {pos} holds {len(raw) - pos} bytes, "
            f"header declares {expected - pos}"
        )
    n = lengths[0] if lengths else 0
    data = np.frombuffer(raw, dtype="<f4", offset=pos).reshape(len(names), n).astype(np.float32)
    return Record(id=header["id"], channels=tuple(names), data=data, fs=float(fs))


def save_annotations(events: Iterable[Event], path) -> None:
    payload = [e.to_json() for e in sorted(events, key=lambda e: (e.onset, e.label))]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def parse_events(items, duration: float | None = None) -> list[Event]:
    events = []
    for n, item in enumerate(items):
        try:
            event = Event(item["class"], float(item["onset"]), float(item["duration"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"annotation #{n}: missing or invalid field ({exc})") from None
        except ValueError as exc:
            raise FormatError(f"annotation #{n}: {exc}") from None
        if duration is not None and event.offset > duration + 1e-9:
            raise FormatError(
                f"annotation #{n}: event ends at {event.offset:.3f} s beyond record end {duration:.3f} s"
            )
        events.append(event)
    return sorted(events, key=lambda e: (e.onset, e.label))


def load_annotations(path, duration: float | None = None) -> list[Event]:
    """Read events from ``path``, sorted by onset.

    If ``duration`` is given, events running past the record end are rejected.
    An empty file is an empty annotation list.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at char {exc.pos}") from None
    if not isinstance(items, list):
        raise FormatError(f"{path}: expected a JSON array of events")
    return parse_events(items, duration)


@dataclass
class DatasetManifest:
    """Paired record/annotation paths with their split assignment."""

    entries: list[tuple[str, str]]
    splits: list[str] = field(default_factory=list)
    seed: int | None = None

    def __post_init__(self):
        if self.splits and len(self.splits) != len(self.entries):
            raise ValueError("one split label per entry required")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split labels {sorted(bad)}")

    def subset(self, split: str) -> list[tuple[str, str]]:
        return [e for e, s in zip(self.entries, self.splits) if s == split]

    def to_json(self) -> list[dict]:
        splits = self.splits or [None] * len(self.entries)
        return [{"record": r, "annotations": a, "split": s} for (r, a), s in zip(self.entries, splits)]


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    """Load a manifest; relative entry paths resolve against its directory."""
    path = Path(path)
    try:
        items = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at char {exc.pos}") from None
    if not isinstance(items, list):
        raise FormatError(f"{path}: manifest must be a JSON list")
    base = path.parent
    entries, splits = [], []
    for n, item in enumerate(items):
        try:
            rec, ann = item["record"], item["annotations"]
        except (KeyError, TypeError):
            raise FormatError(f"{path}: entry #{n} needs 'record' and 'annotations'") from None
        entries.append((str(base / rec), str(base / ann)))
        splits.append(item.get("split"))
    if any(s is None for s in splits):
        splits = [] if all(s is None for s in splits) else splits
    return DatasetManifest(entries, splits)


def split_dataset(manifest: DatasetManifest, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetManifest:
    """Randomly assign each entry to train/eval/test.

    Eval and test sizes are ``fraction * n`` rounded to the nearest integer;
    the remainder goes to train.
    """
    n = len(manifest.entries)
    if n == 0:
        raise ValueError("cannot split an empty manifest")
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_eval = int(math.floor(fractions[1] * n + 0.5))
    n_test = int(math.floor(fractions[2] * n + 0.5))
    while n_eval + n_test > n:
        if n_test >= n_eval:
            n_test -= 1
        else:
            n_eval -= 1
    order = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=object)
    labels[order[:n_eval]] = "eval"
    labels[order[n_eval : n_eval + n_test]] = "test"
    labels[order[n_eval + n_test :]] = "train"
    return DatasetManifest(list(manifest.entries), list(labels), seed)
