"""Acceptance checks, one per criterion.

Run ``python tests/test_acceptance.py`` for the PASS/FAIL table, or through pytest
where the same lines appear in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from ionqc import chain as ch
from ionqc import detection as dt
from ionqc import gates as gt
from ionqc import oracle as orc
from ionqc import register as rg
from ionqc import sequencer as sq

NU = 2 * math.pi * 1.0025e6  # off the 10 kHz grid so the carrier term does not vanish at T
MODE = gt.ModeSpec(NU, 0.05, 0.0)
RESULTS = {}


def _mode(n):
    c = ch.build_chain(ch.TrapSpec(n, NU))
    return gt.ModeSpec(c.mode_freqs[0], float(c.lamb_dicke[0]), 0.0)


def criterion_1():
    t0 = time.time()
    worst = 0.0
    for h in [(1,), (1, 3)]:
        wf = gt.robust_waveform(MODE, h)
        offs = (-0.05, 0.0, 0.05)
        grid = (0.0,) + tuple(wf.duration * (1 + o) for o in offs)
        for nbar in (0.0, 0.5, 2.0):
            res = orc.evolve(wf, MODE, 2, orc.OracleConfig(thermal_nbar=nbar, time_grid=grid))
            for k, off in enumerate(offs, 1):
                f_an = gt.path_fidelity(gt.perturbed_path(wf, MODE, "gate_time", off), nbar, 2)
                worst = max(worst, abs(orc.bell_fidelity(res, k) - f_an))
    dt_ = time.time() - t0
    return worst <= 5e-3 and dt_ < 60, f"max |analytic - oracle| = {worst:.2e} (<= 5e-3), runtime {dt_:.1f} s (< 60 s)"


def criterion_2():
    exact = all(gt.fidelity_2N(0.0, 0.0, math.pi / 2, nb, n) == 1.0 for nb in (0, 0.5, 2) for n in range(2, 9))
    f = orc.bell_fidelity(orc.evolve(gt.robust_waveform(MODE, (1,)), MODE, 2))
    return exact and f >= 0.999, f"formula exactly 1: {exact}; MS oracle Bell fidelity {f:.6f} (>= 0.999)"


def criterion_3():
    ms = gt.robust_waveform(MODE, (1,))
    card = gt.robust_waveform(MODE, (1, 3))
    off = [-0.03, 0.03]
    d_ms = 1 - gt.robustness_scan(ms, MODE, "gate_time", off).fidelities
    d_card = 1 - gt.robustness_scan(card, MODE, "gate_time", off).fidelities
    ratio = float(np.max(d_card / d_ms))
    sigma = math.sqrt(2) / 2e-3  # quasi-static detuning with 2 ms Ramsey 1/e time
    peaks = {}
    for name, wf in (("ms", ms), ("cardioid", card)):
        grid = (0.0,) + tuple(np.linspace(0.97, 1.03, 7) * wf.duration)
        cfg = orc.OracleConfig(carrier_enabled=True, step_factor=0.05, time_grid=grid,
                               dephasing_sigma=sigma, dephasing_nodes=5)
        r = orc.evolve(wf, MODE, 2, cfg)
        peaks[name] = max(orc.bell_fidelity(r, k) for k in range(1, len(grid)))
    ok = ratio <= 0.2 and peaks["cardioid"] > peaks["ms"]
    return ok, (f"drop ratio cardioid/MS at +-3% = {ratio:.4f} (<= 0.2); peaks with carrier and dephasing: "
                f"cardioid {peaks['cardioid']:.5f} vs MS {peaks['ms']:.5f}")


def criterion_4():
    ns = np.arange(2, 9)
    slopes = {}
    for name, h in (("ms", (1,)), ("cardioid", (1, 3))):
        wf = gt.robust_waveform(MODE, h)
        inf = [1 - gt.robustness_scan(wf, MODE, "gate_time_setpoint", [0.01], N=int(n)).fidelities[0] for n in ns]
        slopes[name] = gt.loglog_slope(ns, inf)
    ok = all(abs(s - 2.0) <= 0.2 for s in slopes.values())
    return ok, "log-log slopes " + ", ".join(f"{k} {v:.3f}" for k, v in slopes.items()) + " (2.0 +- 0.2)"


def criterion_5():
    mode = _mode(4)
    wf = gt.robust_waveform(mode, (1, 3))
    r = orc.evolve(wf, mode, 4)
    p = r.populations[-1]
    ends = float(p[0] + p[-1])
    rest = float(p[1:-1].sum())
    return ends >= 0.99 and rest <= 0.01, f"P(1111)+P(0000) = {ends:.6f} (>= 0.99), residual {rest:.2e} (<= 0.01)"


def _detector():
    c = ch.build_chain(ch.TrapSpec(5, ch.axial_freq_for_min_spacing(5, 2.83e-6)))
    return dt.Detector.calibrated(c.positions, seed=2)


def criterion_6():
    det = _detector()
    rng = np.random.default_rng(6)
    pat = rng.integers(0, 2, size=(20000, 5)).astype(bool)
    px = dt.synthesize_pixels(pat, det.positions, det.camera, rng)
    err = float(np.mean(det.table.classify_pixels(px) != pat))
    n = 30000
    dark = np.zeros((n, 5), bool)
    px = dt.synthesize_pixels(dark, det.positions, det.camera, rng, lifetime=rg.D_LIFETIME)
    derr = float(det.table.classify_pixels(px).mean())
    ok = err < 1e-3 and abs(derr - 2.6e-3) <= 0.4e-3
    return ok, (f"held-out error {err:.2e} over 2e4 shots x 5 ions (< 1e-3); dark error with decay "
                f"{derr:.2e} over {5 * n} ions (2.6e-3 +- 0.4e-3)")


def criterion_7():
    det = _detector()
    cam = det.camera
    rng = np.random.default_rng(7)
    px = dt.synthesize_pixels(rng.integers(0, 2, size=(10000, 5)), det.positions, cam, rng)
    frames = [dt.Frame(cam.cols, cam.rows, p) for p in px]
    batch = det.table.classify_many(frames)
    early = True
    same = True
    for f, b in zip(frames, batch):
        bits, events = dt.classify_stream(f.rows(), det.table, cam.row_readout_time)
        same &= bits == b
        early &= all(t < cam.rows * cam.row_readout_time for _, _, row, t in events if row < cam.rows - 1)
    last = det.table.last_rows()
    return same and early, f"stream == batch on 1e4 frames: {same}; early emission: {early} (last rows {last})"


def criterion_8():
    rep = dt.latency_budget(dt.CameraSpec())
    ok = 600e-6 <= rep.readout <= 700e-6 and 300e-6 <= rep.storage_overhead <= 400e-6 and 1e-3 <= rep.total <= 2e-3
    return ok, (f"readout {rep.readout * 1e6:.0f} us, storage {rep.storage_overhead * 1e6:.0f} us, "
                f"total {rep.total * 1e3:.3f} ms")


def criterion_9():
    few = [0.0, math.pi / 2, math.pi, 3 * math.pi / 2]
    quiet = sq.Machine.noiseless()
    off = sq.Machine.noiseless(branching=False)
    noisy = sq.default_machine()
    vals = {}
    for w in (1, 2):
        vals[f"noiseless_{w}"] = sq.feedback_experiment(w, quiet, seed=10 + w, shots=4000, phis=few,
                                                        scan_shots=50).success
        vals[f"no_branch_{w}"] = sq.feedback_experiment(w, off, seed=20 + w, shots=4000, phis=few,
                                                        scan_shots=50).success
        vals[f"noisy_{w}"] = sq.feedback_experiment(w, noisy, seed=30 + w, shots=4000, phis=few,
                                                    scan_shots=50).success
    ok = all(vals[f"noiseless_{w}"] >= 0.99 for w in (1, 2))
    ok &= all(abs(vals[f"no_branch_{w}"] - 0.5) <= 0.02 for w in (1, 2))
    ok &= all(0.80 <= vals[f"noisy_{w}"] <= 0.90 for w in (1, 2))
    return ok, ", ".join(f"{k} {v:.4f}" for k, v in vals.items())


def criterion_10():
    w = ch.axial_freq_for_min_spacing(5, 2.83e-6)
    c = ch.build_chain(ch.TrapSpec(5, w))
    f = ch.to_hz(w)
    spacing_ok = abs(c.min_spacing - 2.83e-6) < 1e-12
    band_ok = 1e6 <= f <= 1.5e6
    rep = ch.CrosstalkReport.from_resonant_ratio(0.12)
    ident = rep.r_ls == rep.r_res**2 and rep.epsilon_bound == 2 * rep.r_ls**2
    ls = ch.to_hz(ch.light_shift(ch.BeamModel(resonant_rabi=ch.hz(500e3), detuning=ch.hz(5e6))))
    ok = spacing_ok and band_ok and ident and abs(ls - 50e3) < 1e-6
    return ok, (f"min spacing {c.min_spacing * 1e6:.4f} um at {f / 1e6:.4f} MHz (band 1-1.5 MHz: {band_ok}); "
                f"crosstalk identities exact: {ident}; light shift {ls / 1e3:.3f} kHz")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def _line(k, ok, detail):
    return f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("k", range(1, 11))
def test_criterion(k):
    ok, detail = CRITERIA[k - 1]()
    line = _line(k, ok, detail)
    RESULTS[k] = line
    print(line)
    assert ok, line


if __name__ == "__main__":
    for k, fn in enumerate(CRITERIA, 1):
        print(_line(k, *fn()), flush=True)
