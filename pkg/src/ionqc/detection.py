"""EMCCD readout model: synthetic frames, threshold calibration and row-streaming decisions.

Photon statistics, pixel geometry and rates are plumbing chosen to give
sub-1e-3 discrimination error at 1 ms exposure; they are not measured values.
"""
from __future__ import annotations

import math
import queue
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

FRAME_MAGIC = b"IONF"
_HEADER = struct.Struct("<4sIII")


class DetectionError(ValueError):
    pass


class CalibrationError(DetectionError):
    """Bright and dark sum distributions cannot be separated."""

    def __init__(self, message, overlap=None):
        super().__init__(message)
        self.overlap = overlap


class TruncatedFrameError(DetectionError):
    def __init__(self, missing_rows):
        self.missing_rows = list(missing_rows)
        super().__init__(f"frame stream ended early; missing rows {self.missing_rows}")


@dataclass(frozen=True)
class CameraSpec:
    rows: int = 6
    cols: int = 40
    pixel_pitch: float = 16e-6
    magnification: float = 41.0
    em_gain: float = 100.0
    exposure: float = 1e-3
    row_readout_time: float = 50e-6
    frame_storage_overhead: float = 350e-6
    psf_sigma: float = 0.8  # pixels
    bright_rate: float = 30.0  # detected photons per exposure for a bright ion
    background_rate: float = 0.05  # photons per pixel per exposure
    excess_noise: bool = False  # gamma-distributed EM multiplication
    decision_time: float = 10e-6

    def __post_init__(self):
        for name in ("rows", "cols", "pixel_pitch", "magnification", "em_gain", "exposure",
                     "row_readout_time", "frame_storage_overhead", "psf_sigma"):
            if getattr(self, name) <= 0:
                raise DetectionError(f"camera.{name} must be positive")
        if self.bright_rate < 0 or self.background_rate < 0:
            raise DetectionError("photon rates must be non-negative")
        if self.rows < 2 * math.ceil(2 * self.psf_sigma):
            raise DetectionError("ROI rows smaller than the PSF extent")
        if not 0 < self.decision_time <= 10e-6:
            raise DetectionError("decision time must lie in (0, 10 us]")

    @property
    def pixel_scale(self) -> float:
        """Object-plane distance per pixel (m)."""
        return self.pixel_pitch / self.magnification

    def ion_centers(self, positions) -> np.ndarray:
        """(row, col) image centres of ions at axial ``positions`` (m), chain centred in the ROI."""
        x = np.asarray(positions, dtype=float)
        cols = (self.cols - 1) / 2 + (x - x.mean()) / self.pixel_scale
        rows = np.full_like(cols, (self.rows - 1) / 2)
        c = np.column_stack([rows, cols])
        margin = 2 * self.psf_sigma
        if np.any(cols < margin) or np.any(cols > self.cols - 1 - margin):
            raise DetectionError("ion image falls outside the ROI")
        return c


def roi_for_chain(positions, **kw) -> CameraSpec:
    """Camera with an ROI width that fits the chain, in the 20-40 column range where possible."""
    probe = CameraSpec(**kw)
    x = np.asarray(positions, dtype=float)
    span = (x.max() - x.min()) / probe.pixel_scale if len(x) > 1 else 0.0
    cols = max(20, int(math.ceil(span + 8 * probe.psf_sigma + 2)))
    return CameraSpec(**{**kw, "cols": cols})


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    pixels: np.ndarray  # uint16, row-major

    def __post_init__(self):
        if self.pixels.dtype != np.uint16 or self.pixels.size != self.width * self.height:
            raise DetectionError("frame pixels must be width*height uint16 values")

    @property
    def image(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width)

    def rows(self):
        img = self.image
        for r in range(self.height):
            yield img[r]

    def to_bytes(self) -> bytes:
        return _HEADER.pack(FRAME_MAGIC, self.width, self.height, 16) + self.pixels.astype("<u2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Frame":
        if len(data) < _HEADER.size:
            raise DetectionError("frame file too short")
        magic, w, h, depth = _HEADER.unpack_from(data)
        if magic != FRAME_MAGIC or depth != 16:
            raise DetectionError("not an IONF 16-bit frame")
        body = np.frombuffer(data, dtype="<u2", offset=_HEADER.size)
        if body.size != w * h:
            raise DetectionError(f"frame body has {body.size} pixels, header says {w * h}")
        return cls(w, h, body.astype(np.uint16))


def write_frames(path, frames):
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(f.to_bytes())


def read_frames(path) -> list:
    data = open(path, "rb").read()
    out, off = [], 0
    while off < len(data):
        _, w, h, _ = _HEADER.unpack_from(data, off)
        n = _HEADER.size + 2 * w * h
        out.append(Frame.from_bytes(data[off:off + n]))
        off += n
    return out


def _psf_weights(camera: CameraSpec, centers) -> np.ndarray:
    """Fraction of each ion's photons landing on each pixel, shape (ions, rows, cols)."""
    r = np.arange(camera.rows)[None, :, None]
    c = np.arange(camera.cols)[None, None, :]
    d2 = (r - centers[:, 0, None, None]) ** 2 + (c - centers[:, 1, None, None]) ** 2
    w = np.exp(-d2 / (2 * camera.psf_sigma**2))
    return w / (2 * np.pi * camera.psf_sigma**2)


def synthesize_pixels(patterns, positions, camera: CameraSpec, rng, lifetime: float | None = None) -> np.ndarray:
    """Raw pixel counts for many shots, shape (shots, rows*cols), uint16.

    ``patterns`` is (shots, ions) truthy = bright.  With a finite ``lifetime`` a dark
    ion decays during the exposure with probability 1 - exp(-exposure/lifetime) and
    is then imaged as bright for the whole frame.
    """
    pat = np.atleast_2d(np.asarray(patterns)).astype(bool)
    centers = camera.ion_centers(positions)
    if pat.shape[1] != len(centers):
        raise DetectionError("pattern length does not match the number of ions")
    if lifetime is not None and math.isfinite(lifetime):
        p = -math.expm1(-camera.exposure / lifetime)
        pat = pat | (rng.random(pat.shape) < p)
    psf = _psf_weights(camera, centers).reshape(len(centers), -1)
    mean = camera.background_rate + camera.bright_rate * (pat.astype(float) @ psf)
    photons = rng.poisson(mean)
    if camera.excess_noise:
        counts = np.where(photons > 0, rng.gamma(np.maximum(photons, 1), camera.em_gain), 0.0)
    else:
        counts = photons * camera.em_gain
    return np.clip(np.rint(counts), 0, 65535).astype(np.uint16)


def synthesize_frame(pattern, positions, camera: CameraSpec, rng, lifetime: float | None = None) -> Frame:
    """Camera frame for ions in ``pattern`` (truthy = bright) at axial ``positions`` (m)."""
    pattern = [int(b) for b in pattern]
    px = synthesize_pixels([pattern], positions, camera, rng, lifetime)[0]
    return Frame(camera.cols, camera.rows, px)


@dataclass(frozen=True)
class CalibrationTable:
    width: int
    height: int
    pixel_sets: tuple  # per ion: sorted flat pixel indices
    thresholds: np.ndarray  # bright if sum > threshold
    bright_means: np.ndarray
    dark_means: np.ndarray
    training_error: np.ndarray
    shot_counts: tuple = (0, 0)

    def __post_init__(self):
        seen = set()
        for s in self.pixel_sets:
            if seen & set(s.tolist()):
                raise DetectionError("pixel sets overlap")
            seen |= set(s.tolist())

    @property
    def ion_count(self) -> int:
        return len(self.pixel_sets)

    def last_rows(self) -> list:
        return [int(s.max()) // self.width for s in self.pixel_sets]

    def sums(self, frames) -> np.ndarray:
        """Integer pixel sums, shape (frames, ions)."""
        return self.pixel_sums(np.stack([f.pixels for f in frames]))

    def pixel_sums(self, pixels) -> np.ndarray:
        px = np.asarray(pixels).astype(np.int64)
        return np.column_stack([px[:, s].sum(axis=1) for s in self.pixel_sets])

    def classify_pixels(self, pixels) -> np.ndarray:
        """Boolean bright decisions, shape (shots, ions)."""
        return self.pixel_sums(pixels) > self.thresholds[None, :]

    def classify(self, frame: Frame) -> str:
        px = frame.pixels.astype(np.int64)
        return "".join("1" if px[s].sum() > t else "0" for s, t in zip(self.pixel_sets, self.thresholds))

    def classify_many(self, frames) -> list:
        bits = self.sums(frames) > self.thresholds[None, :]
        return ["".join("1" if b else "0" for b in row) for row in bits]


def _best_threshold(bright: np.ndarray, dark: np.ndarray):
    """Threshold minimising empirical error; ties go to the smallest threshold."""
    u = np.unique(np.concatenate([bright, dark]))
    cand = (u[:-1] + u[1:]) / 2 if len(u) > 1 else u - 0.5
    b = np.sort(bright)
    d = np.sort(dark)
    err = np.searchsorted(b, cand, side="right") + (len(d) - np.searchsorted(d, cand, side="right"))
    k = int(np.argmin(err))  # argmin returns the first (smallest) minimiser
    return float(cand[k]), int(err[k])


def calibrate(bright_frames, dark_frames, centers, fraction: float = 0.1,
              max_error: float = 0.01) -> CalibrationTable:
    """Pixel sets and thresholds from frames with every ion bright / every ion dark.

    Pixels go to the nearest expected centre; within each cell only pixels whose
    mean bright-minus-dark signal exceeds ``fraction`` of the cell peak are kept.
    """
    if len(bright_frames) < 100 or len(dark_frames) < 100:
        raise CalibrationError("need at least 100 bright and 100 dark frames")
    f0 = bright_frames[0]
    w, h = f0.width, f0.height
    signal = (np.mean([f.pixels for f in bright_frames], axis=0)
              - np.mean([f.pixels for f in dark_frames], axis=0)).reshape(h, w)
    centers = np.asarray(centers, dtype=float)
    rr, cc = np.mgrid[0:h, 0:w]
    d2 = (rr[None] - centers[:, 0, None, None]) ** 2 + (cc[None] - centers[:, 1, None, None]) ** 2
    owner = np.argmin(d2, axis=0)
    sets = []
    for i in range(len(centers)):
        cell = np.where(owner == i, signal, -np.inf)
        peak = cell.max()
        if not np.isfinite(peak) or peak <= 0:
            raise CalibrationError(f"no bright signal found for ion {i}", overlap=1.0)
        sets.append(np.flatnonzero((cell >= fraction * peak).ravel()))
    table = CalibrationTable(w, h, tuple(sets), np.zeros(len(sets)), np.zeros(len(sets)),
                             np.zeros(len(sets)), np.zeros(len(sets)))
    sb = table.sums(bright_frames)
    sd = table.sums(dark_frames)
    thr, errs = [], []
    for i in range(len(sets)):
        t, e = _best_threshold(sb[:, i], sd[:, i])
        rate = e / (len(sb) + len(sd))
        if rate > max_error or not sd[:, i].mean() < t < sb[:, i].mean():
            raise CalibrationError(f"ion {i}: bright and dark sums overlap (training error {rate:.3g})",
                                   overlap=rate)
        thr.append(t)
        errs.append(rate)
    return CalibrationTable(w, h, tuple(sets), np.array(thr), sb.mean(axis=0), sd.mean(axis=0),
                            np.array(errs), (len(bright_frames), len(dark_frames)))


class StreamClassifier:
    """Row-by-row pixel summation; each ion's bit is final once its last row is in."""

    def __init__(self, table: CalibrationTable, row_time: float = 0.0):
        self.table = table
        self.row_time = row_time
        w = table.width
        self._by_row = [dict() for _ in range(table.height)]
        for ion, s in enumerate(table.pixel_sets):
            for r in np.unique(s // w):
                self._by_row[r][ion] = s[s // w == r] % w
        self._last = table.last_rows()
        self.reset()

    def reset(self):
        self._acc = [0] * self.table.ion_count
        self._row = 0
        self._bits = [None] * self.table.ion_count
        self.events = []

    def feed(self, row) -> list:
        """Consume one row; returns newly decided ``(ion, bit, row_index, time)`` tuples."""
        if self._row >= self.table.height:
            raise DetectionError("more rows than the frame height")
        row = np.asarray(row).astype(np.int64)
        r = self._row
        for ion, cols in self._by_row[r].items():
            self._acc[ion] += int(row[cols].sum())
        out = []
        for ion, last in enumerate(self._last):
            if last == r:
                bit = "1" if self._acc[ion] > self.table.thresholds[ion] else "0"
                self._bits[ion] = bit
                out.append((ion, bit, r, (r + 1) * self.row_time))
        self._row += 1
        self.events.extend(out)
        return out

    def finish(self) -> str:
        if self._row < self.table.height:
            raise TruncatedFrameError(range(self._row, self.table.height))
        return "".join(self._bits)


def classify_stream(rows, table: CalibrationTable, row_time: float = 0.0):
    """Classify a frame delivered row by row; returns ``(bits, events)``."""
    sc = StreamClassifier(table, row_time)
    for row in rows:
        sc.feed(row)
    bits = sc.finish()
    return bits, list(sc.events)


def classify_frame(frame: Frame, table: CalibrationTable) -> str:
    return table.classify(frame)


def frame_pipeline(frames, table: CalibrationTable, maxsize: int = 64) -> list:
    """Single-producer/single-consumer pipeline: one thread emits rows, the caller classifies.

    Results come back in frame order.
    """
    q = queue.Queue(maxsize=maxsize)
    done = object()

    def produce():
        for f in frames:
            for row in f.rows():
                q.put(row)
            q.put(None)
        q.put(done)

    t = threading.Thread(target=produce, daemon=True)
    t.start()
    sc = StreamClassifier(table)
    out = []
    while True:
        item = q.get()
        if item is done:
            break
        if item is None:
            out.append(sc.finish())
            sc.reset()
        else:
            sc.feed(item)
    t.join()
    return out


@dataclass(frozen=True)
class LatencyReport:
    exposure: float
    readout: float
    decision: float
    total: float
    row_transfer: float = 0.0
    storage_overhead: float = 0.0

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in ("exposure", "readout", "decision", "total",
                                               "row_transfer", "storage_overhead")}


def latency_budget(camera: CameraSpec, decision_time: float | None = None) -> LatencyReport:
    """Exposure + row transfer + storage overhead + decision time."""
    dec = camera.decision_time if decision_time is None else decision_time
    rows = camera.rows * camera.row_readout_time
    readout = rows + camera.frame_storage_overhead
    return LatencyReport(camera.exposure, readout, dec, camera.exposure + readout + dec,
                         rows, camera.frame_storage_overhead)


@dataclass
class Detector:
    """Camera plus a calibration table for a fixed chain geometry."""

    camera: CameraSpec
    positions: np.ndarray
    table: CalibrationTable = field(repr=False)

    @classmethod
    def calibrated(cls, positions, camera: CameraSpec | None = None, seed=0,
                   shots: int = 1500) -> "Detector":
        positions = np.asarray(positions, dtype=float)
        camera = camera or roi_for_chain(positions)
        rng = np.random.default_rng(seed)
        n = len(positions)
        bright = [synthesize_frame([1] * n, positions, camera, rng) for _ in range(shots)]
        dark = [synthesize_frame([0] * n, positions, camera, rng) for _ in range(shots)]
        table = calibrate(bright, dark, camera.ion_centers(positions))
        return cls(camera, positions, table)

    def read(self, pattern, rng) -> str:
        return self.table.classify(synthesize_frame(pattern, self.positions, self.camera, rng))
