import json
import math

import numpy as np
import pytest

from ionqc import register as rg
from ionqc import sequencer as sq


def prog(ins, n=2):
    return sq.SequenceProgram(tuple(ins), n)


@pytest.mark.parametrize("ins", [
    [{"op": "teleport"}],
    [{"op": "global", "phi": 0.0}],
    [{"op": "hide", "ion": 5}],
    [{"op": "measure", "ions": [], "label": "a"}],
    [{"op": "measure", "ions": [0], "label": "a"}, {"op": "measure", "ions": [1], "label": "a"}],
    [{"op": "branch", "label": "x", "targets": {}, "next": 1}],
    [{"op": "measure", "ions": [0], "label": "a"},
     {"op": "branch", "label": "a", "targets": {"1": [0, 1]}, "next": 2}],
    [{"op": "wait", "duration": -1.0}],
])
def test_invalid_programs(ins):
    with pytest.raises(sq.ProgramError):
        prog(ins)


def test_json_roundtrip():
    p = sq.experiment_2_program(0.3)
    q = sq.SequenceProgram.from_json(p.to_json(), 2)
    assert q == p
    with pytest.raises(sq.ProgramError):
        sq.SequenceProgram.from_json(json.dumps({"op": "wait"}), 2)


@pytest.mark.parametrize("which", [1, 2])
def test_noiseless_feedback_is_perfect(which):
    r = sq.feedback_experiment(which, sq.Machine.noiseless(), seed=1, shots=4000, phis=[0.0, math.pi])
    assert r.success >= 0.99


def test_experiment_2_opposite_phase_flips_target():
    res = sq.run_sequence(sq.experiment_2_program(3 * math.pi / 2), sq.Machine.noiseless(), seed=0, shots=200)
    assert all(r.records["final"][1] == "1" for r in res)


@pytest.mark.parametrize("which", [1, 2])
def test_branch_disabled_is_random(which):
    m = sq.Machine.noiseless(branching=False)
    r = sq.feedback_experiment(which, m, seed=3, shots=4000, phis=[0.0])
    assert r.success == pytest.approx(0.5, abs=0.03)


def test_tape_replay_is_exact():
    p = sq.experiment_2_program(1.0)
    m = sq.Machine.noiseless()
    first = sq.run_sequence(p, m, seed=5, shots=1)[0]
    again = sq.run_sequence(p, m, seed=99, shots=1, tape=first.records)[0]
    assert again.records == first.records
    np.testing.assert_array_equal(again.state.amplitudes, first.state.amplitudes)


def test_seeded_runs_reproduce():
    m = sq.default_machine()
    a = sq.run_sequence(sq.experiment_1_program(0.7), m, seed=12, shots=30)
    b = sq.run_sequence(sq.experiment_1_program(0.7), m, seed=12, shots=30)
    assert [r.records for r in a] == [r.records for r in b]


def test_global_phase_does_not_change_statistics():
    # a Z rotation on both ions before a parity-insensitive readout only moves a global phase
    base = [{"op": "ms", "phi": 0.0, "theta": math.pi / 2, "ions": [0, 1]}]
    tail = [{"op": "measure", "ions": [0, 1], "label": "m", "cpmg": False}]
    m = sq.Machine.noiseless()
    a = sq.run_sequence(prog(base + tail), m, seed=4, shots=300)
    b = sq.run_sequence(prog(base + [{"op": "zshift", "ion": 0, "theta": 0.8},
                                     {"op": "zshift", "ion": 1, "theta": -0.8}] + tail), m, seed=4, shots=300)
    assert [r.records for r in a] == [r.records for r in b]


def test_measurement_back_action_is_local():
    # ion 2 shares no entanglement with the measured pair, so its state is untouched
    ins = [
        {"op": "ms", "phi": 0.0, "theta": math.pi / 2, "ions": [0, 1]},
        {"op": "global", "phi": 0.2, "theta": 1.1, "ions": [2]},
        {"op": "hide", "ion": 2},
        {"op": "measure", "ions": [0, 1], "label": "m", "cpmg": False},
    ]
    ref = rg.apply_global(rg.RegisterState.ground(3), 0.2, 1.1, [2])
    for r in sq.run_sequence(prog(ins, 3), sq.Machine.noiseless(), seed=2, shots=20):
        got = rg.unhide(r.state, 2).reduced_density([2])
        np.testing.assert_allclose(got, ref.reduced_density([2]), atol=1e-12)


def test_predicted_success_band():
    p = sq.predicted_feedback_success(rg.NoiseModel())
    assert 0.8 < p < 0.9
    assert sq.predicted_feedback_success(rg.NoiseModel(), rg.EchoSchedule(pulse_count=0)) < p


def test_default_noise_feedback_in_band():
    r = sq.feedback_experiment(2, seed=0, shots=1000, phis=[0.0, math.pi / 2, math.pi, 3 * math.pi / 2],
                               scan_shots=100)
    assert 0.80 <= r.success <= 0.90
    assert r.scan_success <= 1.0
