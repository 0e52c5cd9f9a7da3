import math

import numpy as np
import pytest

from ionqc import gates as gt
from ionqc import oracle as orc

MODE = gt.ModeSpec(2 * math.pi * 1.0025e6, 0.05, 0.0)


def test_thermal_weights():
    w = orc.thermal_weights(0.0)
    np.testing.assert_allclose(w, [1.0])
    w = orc.thermal_weights(2.0)
    assert w.sum() == pytest.approx(1.0)
    assert w[1] / w[0] == pytest.approx(2 / 3)
    assert np.dot(np.arange(len(w)), w) == pytest.approx(2.0, rel=1e-4)


def test_basis_labels_order():
    assert orc.basis_labels(2) == ["11", "10", "01", "00"]


def test_ideal_targets():
    np.testing.assert_allclose(orc.ideal_ms_state(2), np.array([1, 0, 0, 1j]) / math.sqrt(2), atol=1e-12)
    psi = orc.ideal_ms_state(4)
    assert abs(psi[0]) ** 2 == pytest.approx(0.5) and abs(psi[-1]) ** 2 == pytest.approx(0.5)


def test_ms_bell_state_and_norm():
    wf = gt.robust_waveform(MODE, (1,))
    res = orc.evolve(wf, MODE, 2)
    assert orc.bell_fidelity(res) > 0.9999
    assert np.max(np.abs(res.norms - 1)) < 1e-10
    assert res.populations[0, 0] == pytest.approx(1.0)


def test_echoed_cardioid_bell_state():
    wf = gt.robust_waveform(MODE, (1, 3), echo=True)
    res = orc.evolve(wf, MODE, 2)
    assert orc.bell_fidelity(res) > 0.9999


def test_oracle_matches_formula_off_nominal():
    wf = gt.robust_waveform(MODE, (1,))
    p = gt.perturbed_path(wf, MODE, "gate_time", 0.04)
    res = orc.evolve(wf, MODE, 2, orc.OracleConfig(time_grid=(0.0, wf.duration * 1.04)))
    assert orc.bell_fidelity(res) == pytest.approx(gt.path_fidelity(p, 0.0), abs=1e-4)


def test_exact_lamb_dicke_close_to_first_order_with_carrier():
    # the full displacement operator carries the carrier term too
    wf = gt.robust_waveform(MODE, (1,))
    a = orc.bell_fidelity(orc.evolve(wf, MODE, 2, orc.OracleConfig(carrier_enabled=True, step_factor=0.05)))
    b = orc.bell_fidelity(orc.evolve(wf, MODE, 2, orc.OracleConfig(lamb_dicke_order="exact", step_factor=0.05)))
    assert abs(a - b) < 5e-3


def test_truncation_guard():
    wf = gt.robust_waveform(MODE, (1,))
    with pytest.raises(orc.TruncationError):
        orc.evolve(wf, MODE, 2, orc.OracleConfig(fock_cutoff=4, max_cutoff=16, thermal_nbar=3.0))


def test_config_validation():
    with pytest.raises(ValueError):
        orc.OracleConfig(lamb_dicke_order="second")
    with pytest.raises(ValueError):
        orc.OracleConfig(time_grid=(0.0, 2.0, 1.0))


def test_parity_scan_ideal_and_mixed():
    bell = orc.ideal_ms_state(2)
    ps = orc.parity_scan_sim(bell)
    assert ps.amplitude == pytest.approx(1.0, abs=1e-12)
    assert ps.fidelity == pytest.approx(1.0, abs=1e-12)
    mixed = np.diag([0.5, 0, 0, 0.5]).astype(complex)
    ps = orc.parity_scan_sim(mixed)
    assert ps.amplitude == pytest.approx(0.0, abs=1e-12)
    assert ps.fidelity == pytest.approx(0.5)
