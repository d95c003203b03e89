"""Synthetic recordings with planted arousal, leg-movement and breathing events.

Background activity is band-limited pink noise per channel group.  Arousals
add a 12-16 Hz burst to the EEG, EOG and chin channels, leg movements add a
rectified high-frequency burst to both leg channels, and breathing events
attenuate the nasal-pressure and thoracoabdominal channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .signal_io import (
    CHANNELS,
    DatasetManifest,
    Event,
    Record,
    save_annotations,
    save_manifest,
    save_record,
    split_dataset,
)

BACKGROUND_BANDS = {
    "C3": (0.5, 30.0), "C4": (0.5, 30.0), "EOGL": (0.5, 30.0), "EOGR": (0.5, 30.0),
    "Chin": (10.0, 60.0), "LegL": (10.0, 60.0), "LegR": (10.0, 60.0),
    "Nasal": (0.15, 0.5), "Thor": (0.15, 0.5), "Abdo": (0.15, 0.5),
}
AROUSAL_CHANNELS = ("C3", "C4", "EOGL", "EOGR", "Chin")
LEG_CHANNELS = ("LegL", "LegR")
RESPIRATORY_CHANNELS = ("Nasal", "Thor", "Abdo")


@dataclass
class SynthConfig:
    duration: float = 3600.0
    fs: float = 128.0
    rates: dict = field(default_factory=lambda: {"Ar": 20.0, "LM": 35.0, "SDB": 15.0})  # events/hour
    duration_ranges: dict = field(default_factory=lambda: {"Ar": (3.0, 15.0), "LM": (0.5, 10.0), "SDB": (10.0, 60.0)})
    arousal_amplitude: float = 3.0
    leg_amplitude: float = 5.0
    attenuation: tuple = (0.8, 0.95)
    noise_level: float = 1.0
    rate_spread: float = 0.75  # per-record rate multiplier drawn from 1 +/- spread
    cooccurrence: float = 0.3  # probability an SDB event ends in an arousal
    min_gap: float = 5.0
    seed: int = 0

    def __post_init__(self):
        self.duration_ranges = {k: tuple(v) for k, v in self.duration_ranges.items()}
        self.attenuation = tuple(self.attenuation)
        for k, r in self.rates.items():
            if r < 0:
                raise ValueError(f"rate for {k} must be non-negative")
        limits = {"Ar": (3.0, np.inf), "LM": (0.5, 10.0), "SDB": (10.0, np.inf)}
        for k, (lo, hi) in self.duration_ranges.items():
            if not (limits[k][0] <= lo <= hi <= limits[k][1]):
                raise ValueError(f"duration range for {k} must lie within {limits[k]}")
        if not 0 <= self.rate_spread < 1:
            raise ValueError("rate_spread must lie in [0, 1)")

    def to_json(self) -> dict:
        d = asdict(self)
        d["duration_ranges"] = {k: list(v) for k, v in self.duration_ranges.items()}
        d["attenuation"] = list(self.attenuation)
        return d


def pink_noise(n: int, fs: float, band: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Unit-variance 1/f noise restricted to ``band`` Hz."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    gain = np.zeros_like(f)
    inside = (f >= band[0]) & (f <= band[1])
    gain[inside] = 1 / np.sqrt(f[inside])
    x = np.fft.irfft(spec * gain, n)
    return x / x.std()


def _place(count, dur_range, total, min_gap, rng, taken=()):
    """Non-overlapping intervals uniformly placed in [0, total]."""
    placed = list(taken)
    out = []
    for _ in range(count):
        for _ in range(1000):
            d = rng.uniform(*dur_range)
            on = rng.uniform(0, total - d)
            if all(on + d + min_gap <= a or on >= a + b + min_gap for a, b in placed):
                placed.append((on, d))
                out.append((on, d))
                break
        else:
            raise ValueError("event rate too high to place non-overlapping events")
    return out


def _envelope(n, ramp):
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r], env[n - r :] = w, w[::-1]
    return env


def generate_record(config: SynthConfig, rng: np.random.Generator | int, record_id: str = "synth") -> tuple[Record, list[Event]]:
    rng = np.random.default_rng(rng)
    fs, total = config.fs, config.duration
    n = int(round(total * fs))
    hours = total / 3600
    x = np.stack([config.noise_level * pink_noise(n, fs, BACKGROUND_BANDS[c], rng) for c in CHANNELS])
    rows = {c: i for i, c in enumerate(CHANNELS)}

    def rate(k):
        return config.rates.get(k, 0.0) * rng.uniform(1 - config.rate_spread, 1 + config.rate_spread)

    sdb = _place(rng.poisson(rate("SDB") * hours), config.duration_ranges["SDB"], total, config.min_gap, rng)
    arousals = []
    lo, hi = config.duration_ranges["Ar"]
    for on, d in sdb:
        if rng.random() < config.cooccurrence:
            ad = rng.uniform(lo, hi)
            a_on = on + d - rng.uniform(0, 2.0)
            if a_on + ad <= total and all(a_on + ad + config.min_gap <= a or a_on >= a + b + config.min_gap for a, b in arousals):
                arousals.append((a_on, ad))
    n_ar = max(rng.poisson(rate("Ar") * hours) - len(arousals), 0)
    arousals += _place(n_ar, (lo, hi), total, config.min_gap, rng, taken=arousals)
    legs = _place(rng.poisson(rate("LM") * hours), config.duration_ranges["LM"], total, config.min_gap, rng)

    def span(on, d):
        i0 = int(round(on * fs))
        return i0, max(int(round((on + d) * fs)), i0 + 1)

    for on, d in arousals:
        i0, i1 = span(on, d)
        t = np.arange(i1 - i0) / fs
        env = _envelope(i1 - i0, int(0.25 * fs))
        freq = rng.uniform(12.0, 16.0)
        for c in AROUSAL_CHANNELS:
            phase = rng.uniform(0, 2 * np.pi)
            x[rows[c], i0:i1] += config.arousal_amplitude * np.sqrt(2) * env * np.sin(2 * np.pi * freq * t + phase)
    for on, d in legs:
        i0, i1 = span(on, d)
        env = _envelope(i1 - i0, int(0.05 * fs))
        for c in LEG_CHANNELS:
            burst = pink_noise(i1 - i0 + 64, fs, (20.0, 50.0), rng)[32:-32]
            x[rows[c], i0:i1] += config.leg_amplitude * env * np.abs(burst)
    for on, d in sdb:
        i0, i1 = span(on, d)
        depth = rng.uniform(*config.attenuation)
        gain = 1.0 - depth * _envelope(i1 - i0, int(1.0 * fs))
        for c in RESPIRATORY_CHANNELS:
            x[rows[c], i0:i1] *= gain

    events = [Event("SDB", on, d) for on, d in sdb]
    events += [Event("Ar", on, d) for on, d in arousals]
    events += [Event("LM", on, d) for on, d in legs]
    events.sort(key=lambda e: (e.onset, e.label))
    return Record(record_id, CHANNELS, x.astype(np.float32), fs), events


def generate_dataset(n_records: int, config: SynthConfig, seed: int | None = None, out_dir=None) -> DatasetManifest:
    """Write ``n_records`` records plus annotations and a 70/10/20 manifest.

    Each record uses its own seed spawned from ``seed``.  Paths in the
    manifest are relative to ``out_dir``.
    """
    if n_records < 3:
        raise ValueError("need at least 3 records for three splits")
    seed = config.seed if seed is None else seed
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_records)):
        rid = f"synth_{i:03d}"
        record, events = generate_record(config, np.random.default_rng(child), rid)
        save_record(record, out / f"{rid}.rec")
        save_annotations(events, out / f"{rid}.json")
        entries.append((f"{rid}.rec", f"{rid}.json"))
    manifest = split_dataset(DatasetManifest(entries), (0.7, 0.1, 0.2), seed)
    save_manifest(manifest, out / "manifest.json")
    return manifest
