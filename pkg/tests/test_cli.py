import csv
import json

import numpy as np
import pytest

from ionqc import cli


def run(tmp_path, command, text="", seed=0, name="out", extra=()):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(text)
    out = tmp_path / name
    code = cli.main([command, "--config", str(cfg), "--seed", str(seed), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_config_rejects_unknown_key(tmp_path):
    code, _ = run(tmp_path, "design-gate", "waveform.colour = 3\n")
    assert code == cli.EXIT_CONFIG


def test_config_rejects_duplicate_harmonics(tmp_path):
    code, _ = run(tmp_path, "design-gate", "waveform.harmonics = [1, 3, 3]\n")
    assert code == cli.EXIT_CONFIG


def test_config_rejects_bad_values(tmp_path):
    assert run(tmp_path, "scan", "scan.points = 0\n")[0] == cli.EXIT_CONFIG
    assert run(tmp_path, "scan", 'noise.kind = "pink"\n', name="b")[0] == cli.EXIT_CONFIG


def test_gate_design_error_exit_code(tmp_path):
    code, _ = run(tmp_path, "design-gate", "waveform.harmonics = [1, 2]\nwaveform.higher_order = true\n")
    assert code == cli.EXIT_GATE


def test_design_gate_output(tmp_path):
    code, out = run(tmp_path, "design-gate", "waveform.echo = true\n")
    assert code == 0
    rep = json.loads((out / "waveform.json").read_text())
    assert rep["fidelity_2N"] == pytest.approx(1.0, abs=1e-10)
    assert rep["waveform"]["harmonics"] == [1, 3]
    assert len(rep["config_sha256"]) == 64


def test_scan_outputs_and_determinism(tmp_path):
    text = "scan.points = 11\nscan.n_values = [2, 3, 4]\n"
    code, a = run(tmp_path, "scan", text, name="a")
    assert code == 0
    _, b = run(tmp_path, "scan", text, name="b")
    for f in ("scan.csv", "n_scaling.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    rows = read_csv(a / "scan.csv")
    zero = [r for r in rows if float(r["offset"]) == 0.0]
    assert len(zero) == 2 and all(float(r["fidelity"]) == pytest.approx(1.0, abs=1e-12) for r in zero)
    n = read_csv(a / "n_scaling.csv")
    assert [int(r["N"]) for r in n] == [2, 3, 4]


def test_dynamics_output(tmp_path):
    code, out = run(tmp_path, "dynamics", "dynamics.qubits = 2\ndynamics.points = 11\n")
    assert code == 0
    rows = read_csv(out / "dynamics.csv")
    assert {"P_11", "P_00"} <= set(rows[0])
    for r in rows:
        assert sum(float(r[k]) for k in r if k.startswith("P_")) == pytest.approx(1.0, abs=1e-8)


def test_pairs_noiseless_symmetric(tmp_path):
    code, out = run(tmp_path, "pairs", "noise.enabled = false\npairs.shots = 5\npairs.ions = 4\n")
    assert code == 0
    rows = read_csv(out / "pairs.csv")
    mat = {(int(r["ion_i"]), int(r["ion_j"])): float(r["fidelity"]) for r in rows}
    assert len(mat) == 12
    for (i, j), f in mat.items():
        assert f == mat[(j, i)]
        assert f >= 0.999


def test_pairs_threads_do_not_change_output(tmp_path):
    text = "pairs.shots = 10\npairs.ions = 3\n"
    _, a = run(tmp_path, "pairs", text, name="a")
    _, b = run(tmp_path, "pairs", text, name="b", extra=("--threads", "3"))
    assert (a / "pairs.csv").read_bytes() == (b / "pairs.csv").read_bytes()


def test_feedback_small_run(tmp_path):
    text = ("feedback.shots = 60\nfeedback.scan_points = 4\nfeedback.scan_shots = 20\n"
            "camera.calibration_shots = 200\nnoise.enabled = false\n")
    code, a = run(tmp_path, "feedback", text, name="a")
    assert code == 0
    summary = json.loads((a / "feedback.json").read_text())
    assert summary["experiment_1"]["success"] == 1.0 and summary["experiment_2"]["success"] == 1.0
    assert 1e-3 <= summary["latency"]["total"] <= 2e-3
    _, b = run(tmp_path, "feedback", text, name="b")
    for f in ("feedback_shots.csv", "feedback_scan.csv", "feedback.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_crosstalk_output(tmp_path):
    code, out = run(tmp_path, "crosstalk")
    assert code == 0
    s = json.loads((out / "crosstalk.json").read_text())
    assert s["r_ls"] == s["r_res"] ** 2
    assert s["epsilon_bound"] == 2 * s["r_ls"] ** 2
    assert s["light_shift_hz"] == pytest.approx(50e3)
    assert s["waist_diameter_m"] == pytest.approx(3.84e-6, abs=0.01e-6)
    rows = read_csv(out / "crosstalk.csv")
    assert np.all([0 <= float(r["r_res"]) < 1 for r in rows])


def test_detection_error_exit_code(tmp_path):
    text = ("feedback.shots = 10\nfeedback.scan_points = 2\nfeedback.scan_shots = 5\n"
            "camera.calibration_shots = 200\ncamera.bright_rate = 0.2\n")
    assert run(tmp_path, "feedback", text)[0] == cli.EXIT_DETECTION
