import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import iou_ref, match_ref, nms_ref
from sleepdetect.geometry import (
    Detection,
    assign_windows,
    decode_predictions,
    default_class_config,
    encode_targets,
    generate_default_windows,
    iou,
    iou_matrix,
    match_events,
    nms,
    nms_indices,
)
from sleepdetect.signal_io import Event

interval = st.tuples(st.floats(-50, 50, allow_nan=False), st.floats(0.01, 30, allow_nan=False))


class TestDefaultWindows:
    def test_tiling_example(self):
        g = generate_default_windows(60.0, {"Ar": (15.0, 7.5)})
        np.testing.assert_allclose(g.centers, np.arange(7.5, 53, 7.5))
        assert g.n_windows == 7

    def test_full_length_window(self):
        g = generate_default_windows(30.0, {"SDB": (30.0, 15.0)})
        assert g.n_windows == 1 and g.centers[0] == 15.0

    def test_default_grid_count(self):
        g = generate_default_windows(120.0, default_class_config())
        counts = [len(g.windows_of(k)) for k in (1, 2, 3)]
        assert counts == [15, 79, 7]
        assert g.n_windows == sum(counts) == 101

    def test_class_major_order(self):
        g = generate_default_windows(120.0, default_class_config())
        assert np.all(np.diff(g.labels) >= 0)
        for k in (1, 2, 3):
            assert np.all(np.diff(g.centers[g.windows_of(k)]) > 0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1, 300), st.floats(0.1, 1.0), st.floats(0.05, 2.0))
    def test_count_formula(self, t_sec, frac, stride_frac):
        dur = t_sec * frac
        stride = dur * stride_frac
        g = generate_default_windows(t_sec, {"LM": (dur, stride)})
        assert g.n_windows == int(np.floor((t_sec - dur) / stride + 1e-9)) + 1
        assert np.all(g.centers - dur / 2 >= -1e-9) and np.all(g.centers + dur / 2 <= t_sec + 1e-6)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            generate_default_windows(60.0, {})
        with pytest.raises(ValueError):
            generate_default_windows(10.0, {"SDB": (30.0, 15.0)})
        with pytest.raises(ValueError):
            generate_default_windows(60.0, {"SDB": (30.0, 0.0)})


class TestIoU:
    def test_examples(self):
        assert iou((5, 2), (5, 2)) == 1.0
        assert iou((0, 2), (10, 2)) == 0.0
        assert iou((10, 4), (11, 4)) == pytest.approx(0.6, abs=1e-15)

    @settings(max_examples=300)
    @given(interval, interval)
    def test_properties(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert iou(a, a) == pytest.approx(1.0)
        assert v == pytest.approx(iou_ref(a, b), rel=1e-9, abs=1e-12)

    def test_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(0)
        c1, d1 = rng.uniform(0, 50, 7), rng.uniform(0.5, 10, 7)
        c2, d2 = rng.uniform(0, 50, 5), rng.uniform(0.5, 10, 5)
        m = iou_matrix(c1, d1, c2, d2)
        for i in range(7):
            for j in range(5):
                assert m[i, j] == pytest.approx(iou_ref((c1[i], d1[i]), (c2[j], d2[j])), abs=1e-12)


def _grid():
    return generate_default_windows(60.0, {"Ar": (15.0, 7.5), "LM": (3.0, 1.5)})


class TestMatching:
    def test_coincident_event(self):
        g = _grid()
        m = match_events([Event("Ar", 0.0, 15.0)], g)
        assert list(m.windows) == [0]
        np.testing.assert_array_equal(m.targets, [[0.0, 0.0]])
        assert m.onehot[0, 1] == 1

    def test_forced_best_match_below_threshold(self):
        g = _grid()
        ev = Event("Ar", 1.0, 4.0)  # IoU with every Ar window < 0.5
        ious = iou_matrix(g.centers, g.durations, [ev.center], [ev.duration])[:, 0] * (g.labels == 1)
        assert ious.max() < 0.5
        m = match_events([ev], g)
        assert list(m.windows) == [int(np.argmax(ious))]

    def test_no_events(self):
        g = _grid()
        m = match_events([], g)
        assert m.n_matched == 0 and len(m.unmatched) == g.n_windows

    def test_class_restricted(self):
        g = _grid()
        m = match_events([Event("LM", 10.0, 3.0)], g)
        assert np.all(g.labels[m.windows] == 2)

    def test_superset_and_subset(self):
        rng = np.random.default_rng(5)
        g = _grid()
        for _ in range(300):
            events = [Event(str(rng.choice(["Ar", "LM"])), float(o), float(d))
                      for o, d in zip(rng.uniform(0, 50, 4), rng.uniform(0.5, 10, 4))]
            m = match_events(events, g, 0.5)
            ious = iou_matrix(g.centers, g.durations, [e.center for e in events], [e.duration for e in events])
            same = g.labels[:, None] == np.array([g.class_index(e.label) for e in events])[None]
            ious = np.where(same, ious, 0)
            forced = set(int(np.argmax(ious[:, i])) for i in range(len(events)))
            matched = set(m.windows.tolist())
            assert forced <= matched
            assert matched <= forced | set(np.flatnonzero(ious.max(axis=1) >= 0.5).tolist())

    def test_shared_window_goes_to_higher_iou(self):
        g = generate_default_windows(30.0, {"SDB": (30.0, 15.0)})
        a, b = Event("SDB", 0.0, 12.0), Event("SDB", 14.0, 15.0)
        assert list(assign_windows([a, b], g)) == [1]

    def test_matches_reference_on_quantized_instances(self):
        rng = np.random.default_rng(11)
        g = _grid()
        windows = [(["Ar", "LM"][k - 1], c, d) for k, c, d in zip(g.labels, g.centers, g.durations)]
        for _ in range(300):
            n = rng.integers(0, 6)
            events = [Event(str(rng.choice(["Ar", "LM"])), float(rng.integers(0, 80) / 2), float(rng.integers(1, 20) / 2))
                      for _ in range(n)]
            ref = match_ref([(e.label, e.center, e.duration) for e in events], windows, 0.5)
            assert list(assign_windows(events, g, 0.5)) == ref


class TestTargets:
    def test_examples(self):
        np.testing.assert_allclose(encode_targets([10], [4], [8], [4]), [[0.5, 0.0]])
        np.testing.assert_allclose(encode_targets([8], [4], [8], [4]), [[0.0, 0.0]])
        np.testing.assert_allclose(encode_targets([8], [4 * np.e], [8], [4]), [[0.0, 1.0]])

    def test_decode_examples(self):
        g = generate_default_windows(16.0, {"LM": (4.0, 4.0)})  # centers 2, 6, 10, 14
        y = np.zeros((4, 2))
        y[1, 0] = 0.5
        c, d = decode_predictions(y, g)
        assert c[1] == 8.0 and d[1] == 4.0
        assert c[0] == 2.0

    def test_decode_clamps(self):
        g = generate_default_windows(60.0, {"Ar": (15.0, 7.5)})
        y = np.zeros((g.n_windows, 2))
        y[0, 1], y[1, 1] = 100.0, -100.0
        _, d = decode_predictions(y, g)
        assert d[0] == 60.0 and d[1] == 0.1
        assert np.all(np.isfinite(decode_predictions(y, g, clamp=False)[1]))

    @settings(max_examples=300)
    @given(st.floats(0, 120), st.floats(0.1, 120), st.floats(0, 120), st.floats(0.1, 120))
    def test_roundtrip(self, ec, ed, wc, wd):
        t = encode_targets([ec], [ed], [wc], [wd])[0]
        c = wc + t[0] * wd
        d = wd * np.exp(t[1])
        assert abs(c - ec) < 1e-9 and abs(d - ed) < 1e-9


def _dets(triples):
    return [Detection("Ar", p, c, d) for p, c, d in triples]


class TestNMS:
    def test_suppresses_overlap(self):
        # IoU((10,10),(11,10)) = 9/11 > 0.5
        kept = nms(_dets([(0.9, 10, 10), (0.8, 11, 10)]), 0.5)
        assert [d.probability for d in kept] == [0.9]

    def test_iou_point_six(self):
        kept = nms(_dets([(0.9, 10, 4), (0.8, 11, 4)]), 0.1)
        assert len(kept) == 1

    def test_disjoint_kept(self):
        assert len(nms(_dets([(0.9, 10, 2), (0.8, 30, 2)]), 0.5)) == 2

    def test_all_below_threshold(self):
        assert nms(_dets([(0.4, 10, 2), (0.5, 30, 2)]), 0.5) == []

    def test_sorted_by_center(self):
        kept = nms(_dets([(0.6, 30, 2), (0.9, 10, 2), (0.7, 20, 2)]), 0.5)
        assert [d.center for d in kept] == [10, 20, 30]

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 40), st.integers(1, 12)), max_size=20),
           st.sampled_from([0.0, 0.3, 0.5]))
    def test_matches_reference_and_antichain(self, raw, theta):
        cands = [(p / 10, c / 2, d / 2) for p, c, d in raw]  # coarse values force ties
        keep = nms_indices([c[1] for c in cands], [c[2] for c in cands], [c[0] for c in cands], theta)
        assert list(keep) == nms_ref(cands, theta)
        for i in keep:
            for j in keep:
                if i != j:
                    assert iou_ref(cands[i][1:], cands[j][1:]) < 0.5

    def test_json(self):
        d = Detection("LM", 0.7, 10.0, 4.0)
        assert d.to_json() == {"class": "LM", "probability": 0.7, "onset": 8.0, "duration": 4.0}
