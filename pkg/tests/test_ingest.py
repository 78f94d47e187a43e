import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fallfuse.data import CorpusLayout, FrameRef, align, index_frames, ingest_sensor_csv, load_corpus, parse_timestamp
from fallfuse.data.ingest import load_frame, nearest
from fallfuse.errors import CorpusError, DecodeError, SchemaError
from fallfuse.preprocess import FrameGray, SensorSample, magnitude

import oracles
from fakecorpus import write_corpus


def _csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


HDR = ["timestamp", "wrist_ax", "wrist_ay", "wrist_az", "activity", "subject", "trial"]


def test_parse_timestamp_forms():
    assert parse_timestamp("1530000000123") == 1530000000123
    assert parse_timestamp("1000.4") == 1000
    assert parse_timestamp("1970-01-01T00:00:01.5") == 1500
    assert parse_timestamp("1970-01-01T00_00_02") == 2000
    assert parse_timestamp("1970-01-01T01:00:00+01:00") == 0
    with pytest.raises(ValueError):
        parse_timestamp("frame_17")


def test_ingest_three_rows(tmp_path):
    _csv(tmp_path / "sensors.csv", HDR, [(1000, 3, 4, 0, 1, 1, 1), (1050, 0, 0, 1, 6, 1, 1), (1100, 1, 1, 1, 7, 1, 2),
                                          (1150, 1, 1, 1, 7, 2, 2)])
    samples, dropped = ingest_sensor_csv(CorpusLayout(tmp_path), {1})
    assert len(samples) == 3 and dropped == 0
    assert samples[0].sv_total == 5.0
    assert [s.activity_id for s in samples] == [1, 6, 7]


def test_ingest_drops_blank_axis(tmp_path):
    _csv(tmp_path / "sensors.csv", HDR, [(1000, "", 4, 0, 1, 1, 1), (1050, 0, 0, 1, 6, 1, 1)])
    samples, dropped = ingest_sensor_csv(CorpusLayout(tmp_path), {1})
    assert len(samples) == 1 and dropped == 1


def test_ingest_recomputes_magnitude_for_1000_rows(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.uniform(-4, 4, (1000, 3))
    _csv(tmp_path / "sensors.csv", HDR, [(i, *(repr(float(c)) for c in v), 6, 1, 1) for i, v in enumerate(vals)])
    samples, _ = ingest_sensor_csv(CorpusLayout(tmp_path), {1})
    assert len(samples) == 1000
    for s, v in zip(samples, vals):
        assert (s.ax, s.ay, s.az) == tuple(v)
        assert abs(s.sv_total - oracles.magnitude(*v)) <= 1e-9


def test_ingest_missing_column_names_it(tmp_path):
    _csv(tmp_path / "sensors.csv", ["timestamp", "wrist_ax", "wrist_ay", "activity"], [(1, 1, 1, 1)])
    with pytest.raises(SchemaError, match="wrist_az"):
        ingest_sensor_csv(CorpusLayout(tmp_path), {1})


def test_ingest_custom_columns_and_per_subject_files(tmp_path):
    for s in (1, 2):
        _csv(tmp_path / f"subject{s}.csv", ["t", "x", "y", "z", "act"], [(s * 100, 1, 2, 2, 6)])
    layout = CorpusLayout(tmp_path, sensor_csv="subject{subject}.csv",
                          columns={"timestamp": "t", "ax": "x", "ay": "y", "az": "z", "activity": "act",
                                   "subject": "", "trial": ""})
    samples, _ = ingest_sensor_csv(layout, {2})
    assert [(s.timestamp, s.subject, s.sv_total) for s in samples] == [(200, 2, 3.0)]


def test_ingest_empty_result(tmp_path):
    _csv(tmp_path / "sensors.csv", HDR, [(1000, 1, 1, 1, 1, 5, 1)])
    with pytest.raises(CorpusError):
        ingest_sensor_csv(CorpusLayout(tmp_path), {1})
    with pytest.raises(CorpusError):
        ingest_sensor_csv(CorpusLayout(tmp_path / "nowhere"), {1})


def test_data_root_env_override(tmp_path, monkeypatch):
    _csv(tmp_path / "sensors.csv", HDR, [(1000, 1, 1, 1, 1, 1, 1)])
    monkeypatch.setenv("FALLFUSE_DATA_ROOT", str(tmp_path))
    layout = CorpusLayout("/definitely/not/here")
    assert layout.root == tmp_path
    assert len(ingest_sensor_csv(layout, {1})[0]) == 1


def _frames(tmp_path, stamps, camera=1):
    d = tmp_path / "S1" / "A1" / "T1" / f"cam{camera}"
    d.mkdir(parents=True, exist_ok=True)
    for name in stamps:
        (d / f"{name}.png").write_bytes(b"")
    return d


def test_index_frames_sorted(tmp_path):
    stamps = list(range(1000, 1500, 50))
    np.random.default_rng(0).shuffle(stamps)
    _frames(tmp_path, stamps)
    idx = index_frames(CorpusLayout(tmp_path), 1)
    assert [f.timestamp for f in idx] == sorted(stamps)
    assert len(idx) == 10


def test_index_frames_iso_names_and_skips(tmp_path, caplog):
    _frames(tmp_path, ["1970-01-01T00_00_01.000000", "1970-01-01T00_00_00.500000", "garbage"])
    with caplog.at_level(logging.WARNING):
        idx = index_frames(CorpusLayout(tmp_path), 1)
    assert [f.timestamp for f in idx] == [500, 1000]
    assert "garbage" in caplog.text


def test_index_frames_dedup(tmp_path, caplog):
    d = _frames(tmp_path, ["1000"])
    (d / "1000.0.png").write_bytes(b"")
    with caplog.at_level(logging.WARNING):
        idx = index_frames(CorpusLayout(tmp_path), 1)
    assert len(idx) == 1 and "duplicate" in caplog.text


def test_index_frames_empty(tmp_path):
    with pytest.raises(CorpusError):
        index_frames(CorpusLayout(tmp_path), 2)


def _sample(t, activity=6):
    return SensorSample(t, 0.0, 0.0, 1.0, 1.0, activity, 1, 1)


def _ref(t, cam):
    return FrameRef(t, None, cam, np.full((32, 32), 0.5))


def test_align_examples():
    ex, unmatched = align([_sample(1000, 1)], [_ref(1000, 1)], [_ref(1000, 2)], 100)
    assert len(ex) == 1 and unmatched == 0 and ex[0].label == 1
    assert ex[0].cam1.source_camera == 1 and ex[0].cam2.source_camera == 2
    ex, unmatched = align([_sample(1000)], [_ref(1000, 1)], [_ref(1200, 2)], 100)
    assert ex == [] and unmatched == 1


def test_nearest_tie_prefers_earlier():
    assert nearest([100, 200], 150) == 0
    assert nearest([100, 200], 151) == 1
    assert nearest([100], 10) == 0 and nearest([100], 1000) == 0


def test_align_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    ts = np.sort(rng.integers(0, 100_000, 500))
    cam1 = sorted(set((ts + rng.integers(-60, 60, 500)).tolist()))
    cam2 = sorted(set((ts + rng.integers(-150, 150, 500)).tolist()))
    samples = [_sample(int(t)) for t in ts]
    ex, unmatched = align(samples, [_ref(t, 1) for t in cam1], [_ref(t, 2) for t in cam2], 100)
    expected = []
    for t in ts:
        i1, i2 = oracles.nearest_index(cam1, t), oracles.nearest_index(cam2, t)
        if abs(cam1[i1] - t) <= 100 and abs(cam2[i2] - t) <= 100:
            expected.append((int(t), cam1[i1], cam2[i2]))
    assert [(e.timestamp, e.cam1.timestamp, e.cam2.timestamp) for e in ex] == expected
    assert unmatched == len(ts) - len(expected)


@settings(max_examples=30)
@given(st.lists(st.integers(0, 5000), min_size=1, max_size=40), st.lists(st.integers(0, 5000), min_size=1,
       max_size=40, unique=True), st.integers(0, 300), st.integers(0, 300))
def test_align_monotone_in_tolerance(sensor_ts, frame_ts, tol_a, tol_b):
    lo, hi = sorted((tol_a, tol_b))
    frame_ts = sorted(frame_ts)
    samples = [_sample(t) for t in sensor_ts]
    refs1 = [_ref(t, 1) for t in frame_ts]
    refs2 = [_ref(t, 2) for t in frame_ts]
    n_lo = len(align(samples, refs1, refs2, lo)[0])
    n_hi = len(align(samples, refs1, refs2, hi)[0])
    assert n_lo <= n_hi
    for e in align(samples, refs1, refs2, hi)[0]:
        assert abs(e.cam1.timestamp - e.timestamp) <= hi and abs(e.cam2.timestamp - e.timestamp) <= hi


def test_load_frame_decodes_png(tmp_path):
    from PIL import Image
    img = np.zeros((40, 40, 3), dtype=np.uint8)
    img[:, 20:] = 255
    Image.fromarray(img).save(tmp_path / "5.png")
    frame = load_frame(FrameRef(5, tmp_path / "5.png", 2))
    assert isinstance(frame, FrameGray) and frame.pixels.shape == (32, 32)
    assert frame.pixels[:, 0].max() == 0.0 and frame.pixels[:, -1].min() == pytest.approx(1.0)
    (tmp_path / "6.png").write_bytes(b"not a png")
    with pytest.raises(DecodeError):
        load_frame(FrameRef(6, tmp_path / "6.png", 1))


def test_load_corpus_end_to_end(tmp_path):
    rows = write_corpus(tmp_path, n=30, subjects=(1, 2, 3))
    layout = CorpusLayout(tmp_path, extra_columns=("ankle_ax",), subjects=(1, 2))
    examples = load_corpus(layout)
    kept = [r for r in rows if r["subject"] in (1, 2)]
    assert len(examples) == len(kept)
    for e, r in zip(examples, kept):
        # every field traces back to a CSV cell or the magnitude formula
        assert e.timestamp == r["timestamp"]
        np.testing.assert_array_equal(e.sensor[:3], [r["wrist_ax"], r["wrist_ay"], r["wrist_az"]])
        assert e.sensor[3] == magnitude(r["wrist_ax"], r["wrist_ay"], r["wrist_az"])
        assert e.sensor[4] == r["ankle_ax"]
        assert e.label == (1 if r["activity"] == 1 else 0)
        assert e.cam1.timestamp - e.timestamp == 3
