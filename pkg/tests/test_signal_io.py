import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepdetect.signal_io import (
    CHANNELS,
    DatasetManifest,
    Event,
    FormatError,
    Record,
    load_annotations,
    load_manifest,
    load_record,
    save_annotations,
    save_manifest,
    save_record,
    split_dataset,
)


def _write_raw(path, header, payload):
    blob = json.dumps(header).encode()
    path.write_bytes(struct.pack("<I", len(blob)) + blob + payload)


def _random_record(rng, n_ch=3, n=256, fs=128.0):
    names = [f"ch{i}" for i in range(n_ch)]
    return Record("r", names, rng.standard_normal((n_ch, n)).astype(np.float32), fs)


class TestRecordFormat:
    def test_two_channels_duration(self, tmp_path):
        rec = Record("a", ["x", "y"], np.zeros((2, 256), np.float32), 128.0)
        save_record(rec, tmp_path / "a.rec")
        back = load_record(tmp_path / "a.rec")
        assert back.duration == 2.0
        assert back.channels == ("x", "y")

    def test_samples_bit_exact(self, tmp_path):
        rec = _random_record(np.random.default_rng(0))
        save_record(rec, tmp_path / "r.rec")
        back = load_record(tmp_path / "r.rec")
        assert back.data.dtype == np.float32
        np.testing.assert_array_equal(back.data, rec.data)
        assert back.fs == rec.fs and back.id == rec.id

    def test_resave_byte_identical(self, tmp_path):
        rec = _random_record(np.random.default_rng(1), n_ch=10, n=1000)
        save_record(rec, tmp_path / "a.rec")
        save_record(load_record(tmp_path / "a.rec"), tmp_path / "b.rec")
        assert (tmp_path / "a.rec").read_bytes() == (tmp_path / "b.rec").read_bytes()

    def test_layout_is_header_then_channel_blocks(self, tmp_path):
        data = np.arange(6, dtype=np.float32).reshape(2, 3)
        save_record(Record("z", ["a", "b"], data, 1.0), tmp_path / "z.rec")
        raw = (tmp_path / "z.rec").read_bytes()
        (hlen,) = struct.unpack_from("<I", raw)
        header = json.loads(raw[4 : 4 + hlen])
        assert header["channels"] == ["a", "b"] and header["lengths"] == [3, 3]
        np.testing.assert_array_equal(np.frombuffer(raw[4 + hlen :], "<f4"), np.arange(6))

    def test_channel_length_mismatch(self, tmp_path):
        header = {"id": "x", "fs": 128.0, "channels": ["a", "b"], "lengths": [256, 255]}
        _write_raw(tmp_path / "bad.rec", header, np.zeros(511, "<f4").tobytes())
        with pytest.raises(FormatError, match="channel-length mismatch"):
            load_record(tmp_path / "bad.rec")

    def test_non_positive_fs(self, tmp_path):
        header = {"id": "x", "fs": 0, "channels": ["a"], "lengths": [4]}
        _write_raw(tmp_path / "bad.rec", header, np.zeros(4, "<f4").tobytes())
        with pytest.raises(FormatError, match="offset"):
            load_record(tmp_path / "bad.rec")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "bad.rec").write_bytes(struct.pack("<I", 5) + b"{oops")
        with pytest.raises(FormatError, match="offset 4"):
            load_record(tmp_path / "bad.rec")

    def test_truncated_data(self, tmp_path):
        header = {"id": "x", "fs": 1.0, "channels": ["a"], "lengths": [4]}
        _write_raw(tmp_path / "bad.rec", header, np.zeros(3, "<f4").tobytes())
        with pytest.raises(FormatError, match="data section at offset"):
            load_record(tmp_path / "bad.rec")

    def test_record_invariants(self):
        with pytest.raises(ValueError):
            Record("x", ["a", "a"], np.zeros((2, 4)), 1.0)
        with pytest.raises(ValueError):
            Record("x", ["a"], np.zeros((2, 4)), 1.0)
        with pytest.raises(ValueError):
            Record("x", ["a"], np.zeros((1, 4)), -1.0)

    def test_select_missing_channel(self):
        rec = Record("x", ["a"], np.zeros((1, 4)), 1.0)
        with pytest.raises(KeyError, match="missing"):
            rec.select(["a", "b"])


class TestAnnotations:
    def test_center(self, tmp_path):
        (tmp_path / "a.json").write_text('[{"class": "LM", "onset": 10.0, "duration": 1.5}]')
        (ev,) = load_annotations(tmp_path / "a.json")
        assert ev == Event("LM", 10.0, 1.5)
        assert ev.center == 10.75

    def test_negative_duration(self, tmp_path):
        (tmp_path / "a.json").write_text('[{"class": "LM", "onset": 10.0, "duration": -1}]')
        with pytest.raises(FormatError, match="duration"):
            load_annotations(tmp_path / "a.json")

    def test_unknown_class(self, tmp_path):
        (tmp_path / "a.json").write_text('[{"class": "Spindle", "onset": 1.0, "duration": 1}]')
        with pytest.raises(FormatError, match="unknown event class"):
            load_annotations(tmp_path / "a.json")

    def test_beyond_record_end(self, tmp_path):
        (tmp_path / "a.json").write_text('[{"class": "SDB", "onset": 50.0, "duration": 20}]')
        assert len(load_annotations(tmp_path / "a.json")) == 1
        with pytest.raises(FormatError, match="beyond record end"):
            load_annotations(tmp_path / "a.json", duration=60.0)

    def test_empty_file(self, tmp_path):
        (tmp_path / "a.json").write_text("")
        assert load_annotations(tmp_path / "a.json") == []

    def test_sorted_by_onset(self, tmp_path):
        events = [Event("Ar", 30.0, 3.0), Event("LM", 1.0, 1.0), Event("SDB", 10.0, 12.0)]
        save_annotations(events, tmp_path / "a.json")
        assert [e.onset for e in load_annotations(tmp_path / "a.json")] == [1.0, 10.0, 30.0]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["Ar", "LM", "SDB"]),
                              st.floats(0, 1e4, allow_nan=False), st.floats(1e-3, 100, allow_nan=False)),
                    max_size=20))
    def test_roundtrip_identity(self, items):
        import tempfile
        from pathlib import Path

        events = sorted((Event(*t) for t in items), key=lambda e: (e.onset, e.label))
        with tempfile.TemporaryDirectory() as d:
            save_annotations(events, Path(d) / "a.json")
            assert load_annotations(Path(d) / "a.json") == events


class TestSplits:
    def _manifest(self, n):
        return DatasetManifest([(f"r{i}.rec", f"r{i}.json") for i in range(n)])

    def test_large_cohort_split_sizes(self):
        m = split_dataset(self._manifest(2853), (0.5794, 0.0701, 0.3505), seed=0)
        sizes = [m.splits.count(s) for s in ("train", "eval", "test")]
        assert sizes == [1653, 200, 1000]

    def test_deterministic(self):
        a = split_dataset(self._manifest(10), (0.8, 0.1, 0.1), seed=7)
        b = split_dataset(self._manifest(10), (0.8, 0.1, 0.1), seed=7)
        assert a.splits == b.splits

    def test_thirds(self):
        m = split_dataset(self._manifest(3), (1 / 3, 1 / 3, 1 / 3), seed=0)
        assert sorted(m.splits) == ["eval", "test", "train"]

    def test_empty_manifest(self):
        with pytest.raises(ValueError, match="empty"):
            split_dataset(self._manifest(0))

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            split_dataset(self._manifest(5), (0.5, 0.5, 0.1))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(3, 500), st.integers(0, 2**31))
    def test_disjoint_exhaustive(self, n, seed):
        m = split_dataset(self._manifest(n), (0.7, 0.1, 0.2), seed)
        parts = [set(m.subset(s)) for s in ("train", "eval", "test")]
        assert sum(len(p) for p in parts) == n
        assert set().union(*parts) == set(m.entries)

    def test_manifest_roundtrip_resolves_paths(self, tmp_path):
        m = split_dataset(self._manifest(5), (0.6, 0.2, 0.2), seed=1)
        save_manifest(m, tmp_path / "manifest.json")
        back = load_manifest(tmp_path / "manifest.json")
        assert back.splits == m.splits
        assert back.entries[0] == (str(tmp_path / "r0.rec"), str(tmp_path / "r0.json"))


def test_channel_set():
    assert len(CHANNELS) == 10 and len(set(CHANNELS)) == 10
