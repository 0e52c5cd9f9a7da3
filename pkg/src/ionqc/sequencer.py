"""Controller programs with mid-circuit measurement and conditional branching.

A program is a JSON array of instructions.  Supported ops::

    {"op": "global", "phi": ..., "theta": ..., "ions": [..]}     # ions optional
    {"op": "ms", "phi": ..., "theta": ..., "ions": [..], "duration": s}
    {"op": "zshift", "ion": i, "theta": ..., "crosstalk": r}
    {"op": "hide", "ion": i}        {"op": "unhide", "ion": i}
    {"op": "echo", "ions": [..]}    # instantaneous |0> <-> |0~> flip on hidden ions
    {"op": "measure", "ions": [..], "label": "c", "cpmg": true}
    {"op": "branch", "label": "c", "targets": {"1": [start, stop], "0": [start, stop]}, "next": k}
    {"op": "wait", "duration": s}

``branch`` runs the instruction range ``[start, stop)`` chosen by the measured
bitstring, then continues at ``next``.  Instructions inside branch ranges are
only reached through their branch.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import register as rg
from .detection import CameraSpec, Detector, latency_budget

OPS = ("global", "ms", "zshift", "hide", "unhide", "echo", "measure", "branch", "wait")
GATE_DURATION = 200e-6  # entangling gate including the echo prolongation
FEEDBACK_EXPOSURE = 700e-6


class ProgramError(ValueError):
    pass


_REQUIRED = {
    "global": ("phi", "theta"),
    "ms": ("phi", "theta"),
    "zshift": ("ion", "theta"),
    "hide": ("ion",),
    "unhide": ("ion",),
    "echo": (),
    "measure": ("ions", "label"),
    "branch": ("label", "targets", "next"),
    "wait": ("duration",),
}


@dataclass(frozen=True)
class SequenceProgram:
    instructions: tuple
    ion_count: int

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_json(cls, text: str, ion_count: int) -> "SequenceProgram":
        data = json.loads(text)
        if not isinstance(data, list):
            raise ProgramError("program must be a JSON array")
        return cls(tuple(data), ion_count)

    def to_json(self) -> str:
        return json.dumps(list(self.instructions), indent=1)

    def validate(self):
        n = len(self.instructions)
        measured = {}
        consumed = set()
        for k, ins in enumerate(self.instructions):
            op = ins.get("op") if isinstance(ins, dict) else None
            if op not in OPS:
                raise ProgramError(f"instruction {k}: unknown op {op!r}")
            for key in _REQUIRED[op]:
                if key not in ins:
                    raise ProgramError(f"instruction {k} ({op}): missing {key!r}")
            for key in ("ion",):
                if key in ins and not 0 <= ins[key] < self.ion_count:
                    raise ProgramError(f"instruction {k}: ion {ins[key]} out of range")
            for i in ins.get("ions", []) or []:
                if not 0 <= i < self.ion_count:
                    raise ProgramError(f"instruction {k}: ion {i} out of range")
            if op == "measure":
                if not ins["ions"]:
                    raise ProgramError(f"instruction {k}: measure needs at least one ion")
                if ins["label"] in measured:
                    raise ProgramError(f"instruction {k}: label {ins['label']!r} measured twice")
                measured[ins["label"]] = k
            if op in ("wait",) and ins["duration"] < 0:
                raise ProgramError(f"instruction {k}: negative duration")
            if op == "branch":
                lab = ins["label"]
                if lab not in measured:
                    raise ProgramError(f"instruction {k}: branch on unmeasured label {lab!r}")
                if lab in consumed:
                    raise ProgramError(f"instruction {k}: label {lab!r} consumed by two branches")
                consumed.add(lab)
                if not k < ins["next"] <= n:
                    raise ProgramError(f"instruction {k}: next={ins['next']} out of range")
                for key, rng_ in ins["targets"].items():
                    a, b = rng_
                    if not (k < a <= b <= n):
                        raise ProgramError(f"instruction {k}: target {key!r} range {rng_} invalid")

    def span(self) -> float:
        """Upper bound on wall time, counting every branch arm."""
        return sum(_duration(ins) for ins in self.instructions)


def _duration(ins) -> float:
    op = ins["op"]
    if op == "ms":
        return ins.get("duration", GATE_DURATION)
    if op == "wait":
        return ins["duration"]
    if op == "measure":
        return ins.get("exposure", FEEDBACK_EXPOSURE) + 1e-3
    return 0.0


@dataclass
class ShotResult:
    shot: int
    records: dict
    state: rg.RegisterState


@dataclass
class Machine:
    """Execution context shared by all shots of a run."""

    noise: rg.NoiseModel = field(default_factory=rg.NoiseModel)
    echo: rg.EchoSchedule = field(default_factory=rg.EchoSchedule)
    detector: Detector | None = None
    lifetime: float = rg.D_LIFETIME
    branching: bool = True

    @classmethod
    def noiseless(cls, **kw) -> "Machine":
        return cls(noise=rg.NoiseModel(kind="none"), lifetime=math.inf, **kw)


def _camera(machine: Machine) -> CameraSpec:
    return machine.detector.camera if machine.detector else CameraSpec()


def _measure(state, ins, machine, trace, t, rng, tape):
    ions = list(ins["ions"])
    label = ins["label"]
    cam = _camera(machine)
    exposure = ins.get("exposure", FEEDBACK_EXPOSURE)
    lat = latency_budget(cam)
    readout = lat.readout + lat.decision
    forced = None if tape is None else tape[label]
    true_bits, state = rg.measure_fluorescence(state, ions, exposure, rng=rng, lifetime=machine.lifetime,
                                               forced=forced)
    reported = true_bits
    if machine.detector is not None and tape is None:
        pattern = [0] * state.ion_count
        for i, b in zip(ions, true_bits):
            pattern[i] = int(b)
        full = machine.detector.read(pattern, rng)
        reported = "".join(full[i] for i in ions)
    rec = dict(state.classical_record)
    rec[label] = reported
    state = state._with(classical_record=tuple(rec.items()))
    hidden = sorted(state.hidden)
    others = [i for i in range(state.ion_count) if i not in hidden]
    if hidden:
        if ins.get("cpmg", True) and machine.echo.enabled:
            state = rg.cpmg_echo(state, machine.echo, trace, t, hidden, tau_e=exposure, tau_r=readout)
        else:
            state = rg.apply_dephasing(state, trace, t, t + exposure + readout, hidden)
    state = rg.apply_dephasing(state, trace, t, t + exposure + readout, others)
    return state, t + exposure + readout


def run_sequence(program: SequenceProgram, machine: Machine | None = None, seed=None, shots: int = 1,
                 initial: rg.RegisterState | None = None, tape=None) -> list:
    """Execute ``program`` for ``shots`` independent shots.

    ``tape`` maps labels to bitstrings and replays them instead of sampling.
    """
    machine = machine or Machine()
    span = program.span()
    results = []
    for shot, rng in enumerate(rg.shot_rngs(seed, shots)):
        trace = machine.noise.sample(rng, span + 1e-5)
        state = initial if initial is not None else rg.RegisterState.prepare(
            program.ion_count, machine.noise.prep_error, rng)
        state, _ = _execute(program, 0, len(program.instructions), state, machine, trace, 0.0, rng, tape)
        results.append(ShotResult(shot, state.record, state))
    return results


def _execute(program, start, stop, state, machine, trace, t, rng, tape):
    k = start
    ins_list = program.instructions
    while k < stop:
        ins = ins_list[k]
        op = ins["op"]
        if op == "global":
            state = rg.apply_global(state, ins["phi"], ins["theta"], ins.get("ions"))
        elif op == "zshift":
            state = rg.apply_lightshift_z(state, ins["ion"], ins["theta"], ins.get("crosstalk", 0.0))
        elif op == "ms":
            d = ins.get("duration", GATE_DURATION)
            parts = ins.get("ions") or rg.optical_participants(state)
            state = rg.ms_with_dephasing(state, ins["phi"], ins["theta"], trace, t, d, parts,
                                         echo=ins.get("echo", True), gate_error=machine.noise.gate_error,
                                         rng=rng)
            rest = [i for i in range(state.ion_count) if i not in parts]
            state = rg.apply_dephasing(state, trace, t, t + d, rest)
            t += d
        elif op == "hide":
            state = rg.hide(state, ins["ion"], machine.noise.hide_error, rng)
        elif op == "unhide":
            state = rg.unhide(state, ins["ion"], machine.noise.hide_error, rng)
        elif op == "echo":
            state = rg.d_flip(state, ins.get("ions") or sorted(state.hidden))
        elif op == "wait":
            state = rg.apply_dephasing(state, trace, t, t + ins["duration"])
            t += ins["duration"]
        elif op == "measure":
            state, t = _measure(state, ins, machine, trace, t, rng, tape)
        elif op == "branch":
            rec = state.record
            if ins["label"] not in rec:
                raise ProgramError(f"branch on label {ins['label']!r} that has not been measured")
            key = rec[ins["label"]] if machine.branching else next(iter(ins["targets"]))
            if key in ins["targets"]:
                a, b = ins["targets"][key]
                state, t = _execute(program, a, b, state, machine, trace, t, rng, tape)
            k = ins["next"]
            continue
        k += 1
    return state, t


# --- the two coherent-feedback experiments --------------------------------

def _feedback_tail(phi, first_index):
    """Conditional analysis pulse on ion 1 after measuring ion 0 with ion 1 hidden."""
    k = first_index
    return [
        {"op": "hide", "ion": 1},
        {"op": "measure", "ions": [0], "label": "control", "cpmg": True},
        {"op": "unhide", "ion": 1},
        {"op": "branch", "label": "control", "targets": {"1": [k + 4, k + 5], "0": [k + 5, k + 6]},
         "next": k + 6},
        {"op": "global", "phi": phi - math.pi / 2, "theta": math.pi / 2, "ions": [1]},
        {"op": "global", "phi": phi + math.pi / 2, "theta": math.pi / 2, "ions": [1]},
        {"op": "measure", "ions": [0, 1], "label": "final", "cpmg": False, "exposure": 1e-3},
    ]


def experiment_1_program(phi: float) -> SequenceProgram:
    head = [{"op": "global", "phi": 0.0, "theta": math.pi / 2}]
    return SequenceProgram(tuple(head + _feedback_tail(phi, len(head))), 2)


def experiment_2_program(phi: float) -> SequenceProgram:
    head = [
        {"op": "ms", "phi": 0.0, "theta": math.pi / 2, "ions": [0, 1]},
        {"op": "global", "phi": math.pi / 2, "theta": math.pi / 2, "ions": [0]},
    ]
    return SequenceProgram(tuple(head + _feedback_tail(phi, len(head))), 2)


def _success_1(final: str) -> bool:
    return final[0] != final[1]


def _success_2(final: str) -> bool:
    return final[1] == "0"


@dataclass
class FeedbackResult:
    experiment: int
    success: float  # at phi = pi/2
    shots: int
    phis: np.ndarray
    signal: np.ndarray  # exp 1: parity <ZZ>; exp 2: P(target = 1)
    scan_success: float  # from the fitted oscillation amplitude
    records: list = field(default_factory=list)  # (shot, label, bits, success, phi)


def _fit_amplitude(phis, y):
    m = np.column_stack([np.ones_like(phis), np.cos(phis), np.sin(phis)])
    c, *_ = np.linalg.lstsq(m, y, rcond=None)
    return float(np.hypot(c[1], c[2]))


def feedback_experiment(which: int, machine: Machine | None = None, seed=0, shots: int = 4000,
                        phis=None, scan_shots: int = 400) -> FeedbackResult:
    """Run experiment ``which`` (1: separable, 2: entangled) at phi = pi/2 plus a phi scan."""
    if which not in (1, 2):
        raise ValueError("experiment must be 1 or 2")
    machine = machine or default_machine()
    make = experiment_1_program if which == 1 else experiment_2_program
    ok = _success_1 if which == 1 else _success_2
    seeds = rg.seed_sequence(seed).spawn(2)
    main = run_sequence(make(math.pi / 2), machine, seeds[0], shots)
    records = [(r.shot, lab, bits, int(ok(r.records["final"])), math.pi / 2)
               for r in main for lab, bits in r.records.items()]
    success = float(np.mean([ok(r.records["final"]) for r in main]))
    phis = np.linspace(0, 2 * np.pi, 9)[:-1] if phis is None else np.asarray(phis, dtype=float)
    signal = []
    for phi, ss in zip(phis, seeds[1].spawn(len(phis))):
        res = run_sequence(make(float(phi)), machine, ss, scan_shots)
        finals = [r.records["final"] for r in res]
        if which == 1:
            signal.append(np.mean([1.0 if f[0] == f[1] else -1.0 for f in finals]))
        else:
            signal.append(np.mean([f[1] == "1" for f in finals]))
    signal = np.array(signal)
    amp = _fit_amplitude(phis, signal)
    scan_success = min(1.0, (1 + amp) / 2 if which == 1 else 0.5 + amp)
    return FeedbackResult(which, success, shots, phis, signal, scan_success, records)


def feedback_experiment_1(**kw) -> FeedbackResult:
    return feedback_experiment(1, **kw)


def feedback_experiment_2(**kw) -> FeedbackResult:
    return feedback_experiment(2, **kw)


def default_machine(positions=None, seed=0, **noise_kw) -> Machine:
    """Calibrated noise, double CPMG, decay and a camera detector for a two-ion chain."""
    if positions is None:
        positions = np.array([-2.0e-6, 2.0e-6])
    noise = rg.NoiseModel(**{"prep_error": 1e-3, **noise_kw})
    return Machine(noise=noise, detector=Detector.calibrated(positions, seed=seed))


def ou_filtered_variance(correlation_time, windows, pulses, n: int = 4000) -> float:
    """Variance of the toggled field integral for a unit OU process (s^2).

    ``windows`` is the total span (s); ``pulses`` the flip times inside it.
    """
    t = (np.arange(n) + 0.5) * windows / n
    y = np.ones(n)
    for p in pulses:
        y[t > p] *= -1
    k = np.exp(-np.abs(t[:, None] - t[None, :]) / correlation_time)
    return float(y @ k @ y) * (windows / n) ** 2


def predicted_feedback_success(noise: rg.NoiseModel, echo: rg.EchoSchedule | None = None,
                               camera: CameraSpec | None = None) -> float:
    """Success from hidden-pair dephasing alone, for OU noise and the double CPMG."""
    echo = echo or rg.EchoSchedule()
    lat = latency_budget(camera or CameraSpec())
    te, tr = FEEDBACK_EXPOSURE, lat.readout + lat.decision
    pulses = echo.pulse_times(te, tr)
    v = ou_filtered_variance(noise.correlation_time, te + tr, pulses)
    s = noise.pair_sigma(rg.L0, rg.L0T)
    return 0.5 * (1 + math.exp(-s * s * v / 2))
