import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionqc import chain as ch
from ionqc import detection as dt


@pytest.fixture(scope="module")
def five():
    c = ch.build_chain(ch.TrapSpec(5, ch.axial_freq_for_min_spacing(5, 2.83e-6)))
    return dt.Detector.calibrated(c.positions, seed=11)


def test_frame_bytes_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    frames = [dt.Frame(7, 3, rng.integers(0, 65536, 21).astype(np.uint16)) for _ in range(4)]
    path = tmp_path / "f.ionf"
    dt.write_frames(path, frames)
    back = dt.read_frames(path)
    assert len(back) == 4
    for a, b in zip(frames, back):
        assert (a.width, a.height) == (b.width, b.height)
        np.testing.assert_array_equal(a.pixels, b.pixels)


def test_frame_rejects_bad_data():
    with pytest.raises(dt.DetectionError):
        dt.Frame.from_bytes(b"XXXX" + bytes(12))
    with pytest.raises(dt.DetectionError):
        dt.Frame(2, 2, np.zeros(3, dtype=np.uint16))
    good = dt.Frame(2, 2, np.zeros(4, dtype=np.uint16)).to_bytes()
    with pytest.raises(dt.DetectionError):
        dt.Frame.from_bytes(good[:-2])


def test_dark_frame_without_background_is_zero():
    cam = dt.CameraSpec(cols=30, background_rate=0.0)
    f = dt.synthesize_frame("000", [-4e-6, 0, 4e-6], cam, np.random.default_rng(1))
    assert not f.pixels.any()


def test_synthesis_is_seeded():
    cam = dt.CameraSpec(cols=30)
    pos = [-4e-6, 0, 4e-6]
    a = dt.synthesize_frame("101", pos, cam, np.random.default_rng(3))
    b = dt.synthesize_frame("101", pos, cam, np.random.default_rng(3))
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_roi_width_fits_chain(five):
    assert 20 <= five.camera.cols <= 40
    assert five.camera.rows == 6


def test_calibration_tables(five):
    t = five.table
    assert t.ion_count == 5 and t.shot_counts == (1500, 1500)
    assert np.all(t.dark_means < t.thresholds) and np.all(t.thresholds < t.bright_means)
    assert np.all(t.training_error < 1e-3)


def test_held_out_error_without_decay(five):
    rng = np.random.default_rng(2024)
    pat = rng.integers(0, 2, size=(20000, 5)).astype(bool)
    px = dt.synthesize_pixels(pat, five.positions, five.camera, rng)
    err = np.mean(five.table.classify_pixels(px) != pat)
    assert err < 1e-3


def test_dark_error_with_decay(five):
    p = -math.expm1(-1e-3 / 0.390)
    assert p == pytest.approx(2.6e-3, abs=0.05e-3)
    rng = np.random.default_rng(7)
    n = 150_000
    px = dt.synthesize_pixels(np.zeros((n, 1), bool)[:, [0] * 5], five.positions, five.camera, rng, lifetime=0.390)
    err = five.table.classify_pixels(px).mean()
    assert abs(err - p) < 3 * math.sqrt(p * (1 - p) / (5 * n))


def test_inseparable_calibration_raises():
    cam = dt.CameraSpec(cols=30, bright_rate=0.3)
    pos = [-4e-6, 0, 4e-6]
    rng = np.random.default_rng(0)
    b = [dt.synthesize_frame("111", pos, cam, rng) for _ in range(200)]
    d = [dt.synthesize_frame("000", pos, cam, rng) for _ in range(200)]
    with pytest.raises(dt.CalibrationError) as e:
        dt.calibrate(b, d, cam.ion_centers(pos))
    assert e.value.overlap is not None


def test_calibration_needs_enough_frames():
    cam = dt.CameraSpec(cols=30)
    pos = [-4e-6, 4e-6]
    rng = np.random.default_rng(0)
    b = [dt.synthesize_frame("11", pos, cam, rng) for _ in range(50)]
    with pytest.raises(dt.CalibrationError):
        dt.calibrate(b, b, cam.ion_centers(pos))


def test_stream_equals_batch(five):
    rng = np.random.default_rng(99)
    pat = rng.integers(0, 2, size=(10_000, 5))
    px = dt.synthesize_pixels(pat, five.positions, five.camera, rng)
    cam = five.camera
    frames = [dt.Frame(cam.cols, cam.rows, p) for p in px]
    batch = five.table.classify_many(frames)
    stream = [dt.classify_stream(f.rows(), five.table)[0] for f in frames]
    assert stream == batch
    assert dt.frame_pipeline(frames[:500], five.table) == batch[:500]


def test_early_emission(five):
    rng = np.random.default_rng(1)
    f = dt.synthesize_frame("10110", five.positions, five.camera, rng)
    bits, events = dt.classify_stream(f.rows(), five.table, row_time=five.camera.row_readout_time)
    last = five.table.last_rows()
    assert len(events) == 5
    for ion, bit, row, t in events:
        assert row == last[ion] and bits[ion] == bit
        if row < five.camera.rows - 1:
            assert t < five.camera.rows * five.camera.row_readout_time


def test_truncated_stream(five):
    f = dt.synthesize_frame("11111", five.positions, five.camera, np.random.default_rng(0))
    rows = list(f.rows())[:2]
    with pytest.raises(dt.TruncatedFrameError) as e:
        dt.classify_stream(rows, five.table)
    assert e.value.missing_rows == [2, 3, 4, 5]


@settings(max_examples=20, deadline=None)
@given(bits=st.lists(st.booleans(), min_size=5, max_size=5), seed=st.integers(0, 2**32 - 1))
def test_stream_batch_single_frame(five, bits, seed):
    f = dt.synthesize_frame(bits, five.positions, five.camera, np.random.default_rng(seed))
    assert dt.classify_stream(f.rows(), five.table)[0] == dt.classify_frame(f, five.table)


def test_latency_bands():
    rep = dt.latency_budget(dt.CameraSpec())
    assert 600e-6 <= rep.readout <= 700e-6
    assert 300e-6 <= rep.storage_overhead <= 400e-6
    assert 1e-3 <= rep.total <= 2e-3
    assert rep.decision <= 10e-6
    with pytest.raises(dt.DetectionError):
        dt.CameraSpec(decision_time=20e-6)
