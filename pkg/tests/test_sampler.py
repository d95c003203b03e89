import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sleepdetect.sampler import batch_iterator, extract_segment, sample_segment, segment_events
from sleepdetect.signal_io import CHANNELS, Event, Record

FS = 128.0


def _record(seconds=3600.0, fs=4.0):
    return Record("r", CHANNELS, np.zeros((len(CHANNELS), int(seconds * fs)), np.float32), fs)


SPARSE = [Event("Ar", 100.0, 5.0), Event("LM", 1000.0, 2.0), Event("SDB", 2000.0, 30.0)]


def _which(sample):
    (label,) = {e.label for e in sample.events}
    return label


class TestSampleSegment:
    def test_single_class_record(self):
        rng = np.random.default_rng(0)
        rec = _record()
        events = [Event("LM", 50.0 + 100 * i, 2.0) for i in range(5)]
        for _ in range(50):
            s = sample_segment(rec, events, 120.0, rng)
            assert {e.label for e in s.events} == {"LM"}

    def test_class_frequencies_uniform(self):
        rng = np.random.default_rng(1)
        rec = _record()
        events = SPARSE + [Event("LM", 1500.0, 1.0), Event("LM", 2500.0, 1.0)]  # more LM events must not matter
        labels = [_which(sample_segment(rec, events, 120.0, rng)) for _ in range(10_000)]
        counts = np.array([labels.count(k) for k in ("Ar", "LM", "SDB")])
        np.testing.assert_allclose(counts / 10_000, 1 / 3, atol=0.02)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_restricted_classes(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            s = sample_segment(_record(), SPARSE, 120.0, rng, classes=("SDB",))
            assert [e.label for e in s.events] == ["SDB"]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.5, 3590), st.floats(0.5, 60))
    def test_midpoint_inside(self, seed, onset, dur):
        dur = min(dur, 3600 - onset)
        rec = _record()
        ev = Event("SDB", onset, dur)
        s = sample_segment(rec, [ev], 120.0, np.random.default_rng(seed))
        assert s.start <= ev.center <= s.start + 120.0
        assert 0 <= s.start <= rec.duration - 120.0
        assert s.x.shape == (len(CHANNELS), int(120 * rec.fs))
        for e in s.events:
            assert e.duration > 0 and e.offset <= 120.0 + 1e-9

    def test_start_spans_interval(self):
        rng = np.random.default_rng(3)
        rec = _record()
        ev = Event("Ar", 1000.0, 10.0)
        starts = np.array([sample_segment(rec, [ev], 120.0, rng).start for _ in range(4000)])
        assert starts.min() < 1005 - 115 and starts.max() > 1005 - 5
        assert stats.kstest((starts - (1005 - 120)) / 120, "uniform").pvalue > 0.001

    def test_errors(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="shorter"):
            sample_segment(_record(seconds=60), SPARSE[:1], 120.0, rng)
        with pytest.raises(ValueError, match="no events"):
            sample_segment(_record(), [], 120.0, rng)


class TestSegmentEvents:
    def test_clipping(self):
        out = segment_events([Event("SDB", 90.0, 40.0), Event("Ar", 10.0, 5.0)], 100.0, 120.0)
        assert out == [Event("SDB", 0.0, 30.0)]

    def test_extract(self):
        rec = Record("r", ["a"], np.arange(100, dtype=np.float32)[None], 10.0)
        s = extract_segment(rec, [Event("LM", 3.0, 2.0)], 20, 40)
        np.testing.assert_array_equal(s.x[0], np.arange(20, 60))
        assert s.start == 2.0 and s.events == [Event("LM", 1.0, 2.0)]


class TestBatchIterator:
    def _records(self):
        return [(_record(), SPARSE), (_record(), SPARSE[1:])]

    def test_shape_and_count(self):
        batches = list(batch_iterator(self._records(), 8, 120.0, seed=0, steps=5))
        assert len(batches) == 5 and all(len(b) == 8 for b in batches)

    def test_deterministic(self):
        a = [[(s.record_id, s.start) for s in b] for b in batch_iterator(self._records(), 4, 120.0, 7, 3)]
        b = [[(s.record_id, s.start) for s in b] for b in batch_iterator(self._records(), 4, 120.0, 7, 3)]
        assert a == b

    def test_seed_sensitive(self):
        a = next(batch_iterator(self._records(), 8, 120.0, 1, 1))
        b = next(batch_iterator(self._records(), 8, 120.0, 2, 1))
        assert [s.start for s in a] != [s.start for s in b]

    def test_epochs_differ(self):
        a = next(batch_iterator(self._records(), 8, 120.0, 1, 1, epoch=0))
        b = next(batch_iterator(self._records(), 8, 120.0, 1, 1, epoch=1))
        assert [s.start for s in a] != [s.start for s in b]

    def test_skips_records_without_requested_class(self):
        recs = [(_record(), SPARSE[:1]), (_record(), SPARSE[2:])]
        for batch in batch_iterator(recs, 8, 120.0, 0, 3, classes=("Ar",)):
            assert all(_which(s) == "Ar" for s in batch)

    def test_empty(self):
        with pytest.raises(ValueError):
            next(batch_iterator([], 8, 120.0, 0, 1))
