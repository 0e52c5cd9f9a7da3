"""Command-line runner: each subcommand writes data files into ``--out``.

Configuration is a flat ``key = value`` file with dotted section names, for example::

    waveform.harmonics = [1, 3]
    waveform.gate_time_s = 100e-6
    noise.kind = "ou"

Values are JSON where they parse as JSON and plain strings otherwise.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import itertools
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import chain as ch
from . import gates as gt
from . import oracle as orc
from . import register as rg
from . import sequencer as sq
from .detection import CameraSpec, DetectionError, Detector, latency_budget

DEFAULTS = {
    "trap.ion_count": 2,
    "trap.axial_freq_hz": 1.0025e6,
    "beam.wavelength_m": 674e-9,
    "beam.numerical_aperture": 0.19,
    "beam.waist_radius_m": None,
    "beam.m_squared": 1.7,
    "beam.resonant_rabi_hz": 500e3,
    "beam.detuning_hz": 5e6,
    "beam.tail_amplitude": 0.065,
    "beam.spacing_m": 3.7e-6,
    "beam.ions": 3,
    "aod.spot_diameter_m": 1.1e-3,
    "aod.acoustic_velocity_m_s": 650.0,
    "aod.bandwidth_hz": 45e6,
    "waveform.harmonics": [1, 3],
    "waveform.gate_time_s": 100e-6,
    "waveform.echo": False,
    "waveform.higher_order": False,
    "waveform.nbar": 0.0,
    "waveform.eta": None,
    "scan.parameter": "gate_time",
    "scan.span": 0.1,
    "scan.points": 41,
    "scan.n_values": [2, 3, 4, 5, 6, 7, 8],
    "scan.timing_error": 0.01,
    "scan.timing_parameter": "gate_time_setpoint",
    "dynamics.qubits": 4,
    "dynamics.points": 101,
    "dynamics.window": 1.0,
    "dynamics.carrier": False,
    "dynamics.step_factor": 0.05,
    "noise.enabled": True,
    "noise.kind": "ou",
    "noise.optical_coherence_s": 2e-3,
    "noise.hidden_coherence_s": 500e-6,
    "noise.correlation_time_s": 0.4e-3,
    "noise.prep_error": 1e-3,
    "noise.hide_error": 0.0,
    "noise.gate_error": 0.0,
    "noise.d_lifetime_s": rg.D_LIFETIME,
    "camera.rows": 6,
    "camera.pixel_pitch_m": 16e-6,
    "camera.magnification": 41.0,
    "camera.em_gain": 100.0,
    "camera.row_readout_s": 50e-6,
    "camera.storage_overhead_s": 350e-6,
    "camera.bright_rate": 30.0,
    "camera.background_rate": 0.05,
    "camera.calibration_shots": 1500,
    "feedback.experiments": [1, 2],
    "feedback.shots": 4000,
    "feedback.scan_points": 8,
    "feedback.scan_shots": 400,
    "feedback.cpmg": True,
    "feedback.pulses": 4,
    "feedback.branching": True,
    "pairs.ions": 5,
    "pairs.min_spacing_m": 2.83e-6,
    "pairs.shots": 200,
    "pairs.gate_duration_s": 200e-6,
}

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_GATE, EXIT_CHAIN, EXIT_DETECTION, EXIT_PROGRAM, EXIT_TRUNCATION = range(8)


class ConfigError(ValueError):
    pass


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None) -> dict:
    """Defaults overlaid with the file at ``path``; unknown keys are rejected."""
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + Path(path).read_text())
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, raw in parser["run"].items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _value(raw)
    return cfg


def _positive(cfg, *keys):
    for k in keys:
        v = cfg[k]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
            raise ConfigError(f"{k} must be a positive number, got {v!r}")


def validate_config(cfg: dict):
    _positive(cfg, "trap.axial_freq_hz", "beam.wavelength_m", "beam.numerical_aperture", "beam.m_squared",
              "beam.resonant_rabi_hz", "beam.spacing_m", "waveform.gate_time_s", "scan.span",
              "scan.timing_error", "dynamics.window", "dynamics.step_factor", "noise.optical_coherence_s",
              "noise.hidden_coherence_s", "noise.correlation_time_s", "noise.d_lifetime_s",
              "camera.pixel_pitch_m", "camera.magnification", "camera.em_gain", "camera.row_readout_s",
              "camera.storage_overhead_s", "pairs.min_spacing_m", "pairs.gate_duration_s",
              "aod.spot_diameter_m", "aod.acoustic_velocity_m_s", "aod.bandwidth_hz")
    for k in ("trap.ion_count", "scan.points", "dynamics.qubits", "dynamics.points", "feedback.shots",
              "feedback.scan_points", "feedback.scan_shots", "pairs.ions", "pairs.shots", "camera.rows",
              "camera.calibration_shots", "beam.ions"):
        if not isinstance(cfg[k], int) or isinstance(cfg[k], bool) or cfg[k] < 1:
            raise ConfigError(f"{k} must be a positive integer, got {cfg[k]!r}")
    h = cfg["waveform.harmonics"]
    if isinstance(h, int):
        h = cfg["waveform.harmonics"] = [h]
    if not isinstance(h, list) or not h or not all(isinstance(n, int) and n > 0 for n in h):
        raise ConfigError("waveform.harmonics must be a list of positive integers")
    if len(set(h)) != len(h):
        raise ConfigError(f"waveform.harmonics has duplicate entries: {h}")
    if cfg["scan.parameter"] not in gt.SCAN_PARAMETERS or cfg["scan.timing_parameter"] not in gt.SCAN_PARAMETERS:
        raise ConfigError(f"scan.parameter must be one of {gt.SCAN_PARAMETERS}")
    if cfg["noise.kind"] not in ("ou", "static", "none"):
        raise ConfigError("noise.kind must be 'ou', 'static' or 'none'")
    if cfg["feedback.pulses"] % 2:
        raise ConfigError("feedback.pulses must be even")
    if cfg["waveform.nbar"] < 0:
        raise ConfigError("waveform.nbar must be non-negative")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# --- model construction from config -----------------------------------------

def mode_from_config(cfg, ion_count=None) -> gt.ModeSpec:
    n = cfg["trap.ion_count"] if ion_count is None else ion_count
    trap = ch.TrapSpec(n, ch.hz(cfg["trap.axial_freq_hz"]))
    chain = ch.build_chain(trap)
    eta = cfg["waveform.eta"] or float(chain.lamb_dicke[0])
    return gt.ModeSpec(chain.mode_freqs[0], eta, cfg["waveform.nbar"])


def waveform_from_config(cfg, mode, harmonics=None) -> gt.Waveform:
    h = tuple(cfg["waveform.harmonics"] if harmonics is None else harmonics)
    return gt.robust_waveform(mode, h, cfg["waveform.gate_time_s"], cfg["waveform.echo"],
                              cfg["waveform.higher_order"])


def noise_from_config(cfg) -> rg.NoiseModel:
    kind = cfg["noise.kind"] if cfg["noise.enabled"] else "none"
    return rg.NoiseModel(cfg["noise.optical_coherence_s"], cfg["noise.hidden_coherence_s"], kind,
                         cfg["noise.correlation_time_s"],
                         hide_error=cfg["noise.hide_error"] if cfg["noise.enabled"] else 0.0,
                         gate_error=cfg["noise.gate_error"] if cfg["noise.enabled"] else 0.0,
                         prep_error=cfg["noise.prep_error"] if cfg["noise.enabled"] else 0.0)


def camera_from_config(cfg, positions) -> CameraSpec:
    from .detection import roi_for_chain

    return roi_for_chain(positions, rows=cfg["camera.rows"], pixel_pitch=cfg["camera.pixel_pitch_m"],
                         magnification=cfg["camera.magnification"], em_gain=cfg["camera.em_gain"],
                         row_readout_time=cfg["camera.row_readout_s"],
                         frame_storage_overhead=cfg["camera.storage_overhead_s"],
                         bright_rate=cfg["camera.bright_rate"], background_rate=cfg["camera.background_rate"])


# --- output helpers ----------------------------------------------------------

def _write_csv(path: Path, header, rows, cfg_hash, seed):
    buf = io.StringIO()
    buf.write(f"# config_sha256={cfg_hash} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj, cfg_hash, seed):
    path.write_text(json.dumps({"config_sha256": cfg_hash, "seed": seed, **obj}, indent=2, sort_keys=True) + "\n")


# --- subcommands -------------------------------------------------------------

def cmd_design_gate(cfg, out: Path, seed, threads):
    mode = mode_from_config(cfg)
    wf = waveform_from_config(cfg, mode)
    path = gt.trajectory(wf, mode)
    report = {
        "waveform": wf.to_record(),
        "mode_freq_hz": ch.to_hz(mode.mode_freq),
        "eta": mode.lamb_dicke,
        "accumulated_phase": path.accumulated_phase,
        "final_F": path.final_F,
        "final_G": path.final_G,
        "peak_displacement": path.peak_displacement,
        "fidelity_2N": gt.path_fidelity(path, mode.thermal_occupation, 2),
    }
    _write_json(out / "waveform.json", report, config_hash(cfg), seed)
    return report


def cmd_scan(cfg, out: Path, seed, threads):
    mode = mode_from_config(cfg)
    gates = {"ms": waveform_from_config(cfg, mode, (1,)), "robust": waveform_from_config(cfg, mode)}
    offsets = np.linspace(-cfg["scan.span"], cfg["scan.span"], cfg["scan.points"])
    if 0.0 not in offsets:
        offsets = np.sort(np.append(offsets, 0.0))
    param = cfg["scan.parameter"]
    scale = 2 * math.pi if param == "mode_freq" else 1.0  # mode_freq offsets are given in Hz

    def run(name):
        return name, gt.robustness_scan(gates[name], mode, param, offsets * scale)

    with ThreadPoolExecutor(max_workers=threads) as ex:
        scans = dict(ex.map(run, gates))
    rows = [(name, param, float(o), float(f)) for name, s in scans.items()
            for o, f in zip(offsets, s.fidelities)]
    h = config_hash(cfg)
    _write_csv(out / "scan.csv", ["gate", "parameter", "offset", "fidelity"], rows, h, seed)
    ns = cfg["scan.n_values"]
    err = cfg["scan.timing_error"]
    nrows = []
    for n in ns:
        row = [n]
        for name in gates:
            s = gt.robustness_scan(gates[name], mode, cfg["scan.timing_parameter"], [err], N=n)
            row.append(1 - float(s.fidelities[0]))
        nrows.append(row)
    _write_csv(out / "n_scaling.csv", ["N"] + [f"infidelity_{g}" for g in gates], nrows, h, seed)
    slopes = {g: gt.loglog_slope(ns, [r[k + 1] for r in nrows]) for k, g in enumerate(gates)
              if all(r[k + 1] > 0 for r in nrows)}
    return {"peaks": {k: s.peak for k, s in scans.items()}, "slopes": slopes}


def cmd_dynamics(cfg, out: Path, seed, threads):
    nq = cfg["dynamics.qubits"]
    mode = mode_from_config(cfg, nq)
    gates = {"ms": waveform_from_config(cfg, mode, (1,)), "robust": waveform_from_config(cfg, mode)}
    labels = orc.basis_labels(nq)
    rows = []
    summary = {}
    for name, wf in gates.items():
        d = wf.duration
        grid = np.union1d(np.linspace(0, cfg["dynamics.window"] * d, cfg["dynamics.points"]), [d])
        conf = orc.OracleConfig(carrier_enabled=cfg["dynamics.carrier"], time_grid=tuple(grid),
                                step_factor=cfg["dynamics.step_factor"])
        res = orc.evolve(wf, mode, nq, conf)
        k = int(np.argmin(np.abs(grid - d)))
        summary[name] = {"fidelity_at_gate_time": orc.ghz_fidelity(res, k),
                         "p_all_1": float(res.populations[k, 0]), "p_all_0": float(res.populations[k, -1])}
        for t, p in zip(grid, res.populations):
            rows.append([name, float(t)] + [float(x) for x in p])
    _write_csv(out / "dynamics.csv", ["gate", "t_s"] + [f"P_{l}" for l in labels], rows, config_hash(cfg), seed)
    return summary


def _pair_fidelity(n, pair, noise, duration, shots, seed):
    """Bell fidelity of ``pair`` in an ``n``-ion register, spectators parked in 1~."""
    target = orc.ideal_ms_state(2)
    rho = np.zeros((4, 4), dtype=complex)
    for rng in rg.shot_rngs(seed, shots):
        trace = noise.sample(rng, duration + 1e-5)
        st = rg.RegisterState.prepare(n, noise.prep_error, rng)
        for i in range(n):
            if i not in pair:
                st = rg.park(st, i)
        st = rg.ms_with_dephasing(st, 0.0, math.pi / 2, trace, 0.0, duration, list(pair),
                                  gate_error=noise.gate_error, rng=rng)
        rho += st.qubit_density(list(pair))
    rho /= shots
    return float(np.real(target.conj() @ rho @ target))


def cmd_pairs(cfg, out: Path, seed, threads):
    n = cfg["pairs.ions"]
    w = ch.axial_freq_for_min_spacing(n, cfg["pairs.min_spacing_m"])
    noise = noise_from_config(cfg)
    pairs = list(itertools.combinations(range(n), 2))
    seeds = rg.seed_sequence(seed).spawn(len(pairs))

    def run(k):
        return _pair_fidelity(n, pairs[k], noise, cfg["pairs.gate_duration_s"], cfg["pairs.shots"], seeds[k])

    with ThreadPoolExecutor(max_workers=threads) as ex:
        fids = list(ex.map(run, range(len(pairs))))
    mat = np.full((n, n), np.nan)
    for (i, j), f in zip(pairs, fids):
        mat[i, j] = mat[j, i] = f
    rows = [(i, j, mat[i, j]) for i in range(n) for j in range(n) if i != j]
    h = config_hash(cfg)
    _write_csv(out / "pairs.csv", ["ion_i", "ion_j", "fidelity"], rows, h, seed)
    summary = {"mean_fidelity": float(np.mean(fids)), "axial_freq_hz": ch.to_hz(w)}
    _write_json(out / "pairs.json", summary, h, seed)
    return summary


def cmd_feedback(cfg, out: Path, seed, threads):
    noise = noise_from_config(cfg)
    lifetime = cfg["noise.d_lifetime_s"] if cfg["noise.enabled"] else math.inf
    positions = np.array([-2.0e-6, 2.0e-6])
    cam = camera_from_config(cfg, positions)
    ss = rg.seed_sequence(seed).spawn(3)
    det = Detector.calibrated(positions, cam, seed=ss[0], shots=cfg["camera.calibration_shots"])
    machine = sq.Machine(noise, rg.EchoSchedule(cfg["feedback.pulses"], enabled=cfg["feedback.cpmg"]), det,
                         lifetime, cfg["feedback.branching"])
    phis = np.linspace(0, 2 * np.pi, cfg["feedback.scan_points"] + 1)[:-1]
    shot_rows, scan_rows, summary = [], [], {}
    for which in cfg["feedback.experiments"]:
        res = sq.feedback_experiment(which, machine, ss[which], cfg["feedback.shots"], phis,
                                     cfg["feedback.scan_shots"])
        shot_rows += [(which,) + r for r in res.records]
        scan_rows += [(which, float(p), float(s)) for p, s in zip(res.phis, res.signal)]
        summary[f"experiment_{which}"] = {"success": res.success, "scan_success": res.scan_success,
                                          "shots": res.shots}
    h = config_hash(cfg)
    _write_csv(out / "feedback_shots.csv", ["experiment", "shot", "label", "bits", "success", "phi"],
               shot_rows, h, seed)
    _write_csv(out / "feedback_scan.csv", ["experiment", "phi", "signal"], scan_rows, h, seed)
    summary["latency"] = latency_budget(cam).to_record()
    _write_json(out / "feedback.json", summary, h, seed)
    return summary


def cmd_crosstalk(cfg, out: Path, seed, threads):
    beam = ch.BeamModel(cfg["beam.wavelength_m"], cfg["beam.numerical_aperture"], cfg["beam.waist_radius_m"],
                        cfg["beam.m_squared"], ch.hz(cfg["beam.resonant_rabi_hz"]), ch.hz(cfg["beam.detuning_hz"]),
                        cfg["beam.tail_amplitude"])
    x = np.arange(cfg["beam.ions"]) * cfg["beam.spacing_m"]
    rep = ch.crosstalk_map(x, beam)
    tau, spots = ch.aod_figures(ch.AODSpec(cfg["aod.spot_diameter_m"], cfg["aod.acoustic_velocity_m_s"],
                                           cfg["aod.bandwidth_hz"]))
    n = cfg["pairs.ions"]
    w = ch.axial_freq_for_min_spacing(n, cfg["pairs.min_spacing_m"])
    h = config_hash(cfg)
    _write_csv(out / "crosstalk.csv", ["addressed", "neighbour", "r_res"],
               [(i, j, r) for (i, j), r in sorted(rep.pair_ratios.items())], h, seed)
    summary = {**rep.to_record(), "light_shift_hz": ch.to_hz(ch.light_shift(beam)),
               "waist_diameter_m": 2 * beam.effective_waist, "aod_switch_time_s": tau, "aod_spots": spots,
               "min_spacing_axial_freq_hz": ch.to_hz(w)}
    _write_json(out / "crosstalk.json", summary, h, seed)
    return summary


COMMANDS = {
    "design-gate": cmd_design_gate,
    "scan": cmd_scan,
    "dynamics": cmd_dynamics,
    "pairs": cmd_pairs,
    "feedback": cmd_feedback,
    "crosstalk": cmd_crosstalk,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ionqc", description="Trapped-ion register simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value configuration file")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = validate_config(load_config(args.config))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out, args.seed, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except gt.GateDesignError as exc:
        print(f"gate design error: {exc}", file=sys.stderr)
        return EXIT_GATE
    except ch.ChainError as exc:
        print(f"chain error: {exc}", file=sys.stderr)
        return EXIT_CHAIN
    except DetectionError as exc:
        print(f"detection error: {exc}", file=sys.stderr)
        return EXIT_DETECTION
    except sq.ProgramError as exc:
        print(f"program error: {exc}", file=sys.stderr)
        return EXIT_PROGRAM
    except orc.TruncationError as exc:
        print(f"truncation error: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
