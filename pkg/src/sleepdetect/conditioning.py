"""Resampling, Butterworth filter banks and per-record standardization."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .signal_io import CHANNELS, Record

FS_TARGET = 128.0
KAISER_BETA = 5.0
EPS_STD = 1e-8
MAX_DENOMINATOR = 1000


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth filter; ``order`` is the analog prototype order."""

    kind: str  # "bandpass" | "highpass"
    order: int
    edges: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("bandpass", "highpass"):
            raise ValueError(f"unsupported filter kind {self.kind!r}")
        if self.order not in (2, 4):
            raise ValueError(f"filter order must be 2 or 4, got {self.order}")
        if len(self.edges) != (2 if self.kind == "bandpass" else 1):
            raise ValueError(f"{self.kind} filter needs {'two edges' if self.kind == 'bandpass' else 'one edge'}")
        if self.kind == "bandpass" and not self.edges[0] < self.edges[1]:
            raise ValueError("bandpass edges must be increasing")


# Channel groups and their filters.
FILTER_BANK = {
    "eeg_eog": (FilterSpec("bandpass", 2, (0.3, 35.0)), ("C3", "C4", "EOGL", "EOGR")),
    "emg": (FilterSpec("highpass", 4, (10.0,)), ("Chin", "LegL", "LegR")),
    "nasal": (FilterSpec("highpass", 4, (0.03,)), ("Nasal",)),
    "thoracoabdominal": (FilterSpec("bandpass", 2, (0.1, 15.0)), ("Thor", "Abdo")),
}


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def of(cls, x: np.ndarray) -> "ChannelStats":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=1), np.maximum(x.std(axis=1), EPS_STD))


def _ratio(fs_in: float, fs_out: float) -> Fraction:
    ratio = Fraction(fs_out) / Fraction(fs_in)
    if ratio.denominator > MAX_DENOMINATOR or ratio.numerator > MAX_DENOMINATOR * 1000:
        approx = ratio.limit_denominator(MAX_DENOMINATOR)
        if abs(float(approx) - float(ratio)) > 1e-9 * float(ratio):
            raise ValueError(f"resampling ratio {fs_out}/{fs_in} has no rational form with denominator <= {MAX_DENOMINATOR}")
        ratio = approx
    return ratio


def resample(x: np.ndarray, fs_in: float, fs_out: float = FS_TARGET) -> np.ndarray:
    """Polyphase resampling along the last axis with a Kaiser(5.0) anti-aliasing FIR.

    Output length is ``ceil(n * fs_out / fs_in)``.
    """
    if not (fs_in > 0 and fs_out > 0):
        raise ValueError("sampling rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    if fs_in == fs_out:
        return x.copy()
    ratio = _ratio(fs_in, fs_out)
    return sps.resample_poly(x, ratio.numerator, ratio.denominator, axis=-1, window=("kaiser", KAISER_BETA))


def design_filter(spec: FilterSpec, fs: float) -> np.ndarray:
    """Second-order sections ``(n_sections, 6)`` in scipy's ``[b0 b1 b2 1 a1 a2]`` layout.

    A bandpass of prototype order N yields N sections, a highpass of order N
    yields N/2; the bilinear transform is prewarped so the gain at each edge
    is exactly 1/sqrt(2).
    """
    nyq = fs / 2
    for edge in spec.edges:
        if not 0 < edge < nyq:
            raise ValueError(f"band edge {edge} Hz outside (0, {nyq}) Hz")
    wn = spec.edges if spec.kind == "bandpass" else spec.edges[0]
    sos = sps.butter(spec.order, wn, btype=spec.kind, fs=fs, output="sos")
    poles = np.concatenate([np.roots(s[3:]) for s in sos])
    if np.any(np.abs(poles) >= 1):
        raise ArithmeticError("designed filter is unstable")
    return sos


def sos_response(sos: np.ndarray, freqs, fs: float) -> np.ndarray:
    """Complex single-pass response of a section cascade at ``freqs`` Hz."""
    z = np.exp(1j * 2 * np.pi * np.asarray(freqs, dtype=np.float64) / fs)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
    return h


def zero_phase_filter(x: np.ndarray, sos: np.ndarray) -> np.ndarray:
    """Forward-backward filtering along the last axis.

    Edges are extended by odd reflection of ``6 * n_sections`` samples.
    """
    padlen = 6 * len(sos)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] <= padlen:
        raise ValueError(f"signal of {x.shape[-1]} samples too short for zero-phase filtering (needs > {padlen})")
    return sps.sosfiltfilt(sos, x, axis=-1, padtype="odd", padlen=padlen)


def standardize(x: np.ndarray, stats: ChannelStats | None = None) -> np.ndarray:
    """Per-channel ``(x - mean) / std``; a constant channel becomes zeros."""
    x = np.asarray(x, dtype=np.float64)
    if stats is None:
        stats = ChannelStats.of(x)
    return (x - stats.mean[:, None]) / stats.std[:, None]


def condition_record(record: Record, fs_out: float = FS_TARGET, dtype=np.float32) -> Record:
    """Resample all ten channels, filter each group zero-phase, standardize."""
    missing = [c for c in CHANNELS if c not in record.channels]
    if missing:
        raise KeyError(f"record {record.id!r} is missing channels {missing}")
    x = resample(record.select(CHANNELS), record.fs, fs_out)
    for spec, names in FILTER_BANK.values():
        rows = [CHANNELS.index(n) for n in names]
        x[rows] = zero_phase_filter(x[rows], design_filter(spec, fs_out))
    x = standardize(x)
    return Record(record.id, CHANNELS, x.astype(dtype), fs_out)
