"""Multi-tone entangling-gate synthesis and analytic fidelity evaluation.

A gate is an amplitude-modulated drive with tones at ``nu + n_j * xi`` and weights
``r_j``.  Its effect on the shared motional mode is summarised by the phase-space
displacement ``G + iF`` and the accumulated spin-spin phase ``A``.  The displacement
integrand is ``c * sum_j r_j exp(i n_j xi t)`` with ``c = sqrt(2) * eta * Omega``;
with this coupling scale the plain MS choice ``xi = 2 eta Omega`` closes one loop with
``A = pi/2``, and the two-ion fidelity formula reproduces the brute-force spin-boson
result (see ``ionqc.oracle``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SQRT2 = math.sqrt(2.0)


class GateDesignError(ValueError):
    pass


@dataclass(frozen=True)
class ModeSpec:
    mode_freq: float  # rad/s
    lamb_dicke: float
    thermal_occupation: float = 0.0

    def __post_init__(self):
        if self.lamb_dicke <= 0:
            raise GateDesignError("Lamb-Dicke parameter must be positive")
        if self.thermal_occupation < 0:
            raise GateDesignError("thermal occupation must be non-negative")


@dataclass(frozen=True)
class Waveform:
    harmonics: tuple
    weights: tuple
    detuning: float  # xi, rad/s
    rabi: float  # Omega, rad/s
    gate_time: float  # 2 pi / xi
    echo: bool = False

    def __post_init__(self):
        h = tuple(int(n) for n in self.harmonics)
        w = tuple(float(r) for r in self.weights)
        object.__setattr__(self, "harmonics", h)
        object.__setattr__(self, "weights", w)
        if len(h) != len(w) or not h:
            raise GateDesignError("harmonics and weights must be non-empty and of equal length")
        if len(set(h)) != len(h):
            raise GateDesignError(f"harmonics must be distinct, got {h}")
        if 0 in h:
            raise GateDesignError("harmonics must be nonzero")
        if not any(w):
            raise GateDesignError("at least one weight must be nonzero")
        if self.detuning <= 0 or self.gate_time <= 0:
            raise GateDesignError("detuning and gate time must be positive")
        if not math.isclose(self.gate_time * self.detuning, 2 * math.pi, rel_tol=1e-9):
            raise GateDesignError("gate_time must equal 2*pi/detuning")

    @property
    def duration(self) -> float:
        """Total drive time, including the echo prolongation."""
        return self.gate_time * SQRT2 if self.echo else self.gate_time

    @property
    def segment_detuning(self) -> float:
        # each echo half is a full loop at sqrt(2) xi
        return self.detuning * SQRT2 if self.echo else self.detuning

    def with_gate_time(self, gate_time: float) -> "Waveform":
        return replace(self, gate_time=gate_time, detuning=2 * math.pi / gate_time)

    def to_record(self) -> dict:
        return {
            "harmonics": list(self.harmonics),
            "weights": list(self.weights),
            "xi_hz": self.detuning / (2 * math.pi),
            "omega_hz": self.rabi / (2 * math.pi),
            "gate_time_s": self.gate_time,
            "echo": self.echo,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Waveform":
        xi = 2 * math.pi * rec["xi_hz"]
        return cls(tuple(rec["harmonics"]), tuple(rec["weights"]), xi,
                   2 * math.pi * rec["omega_hz"], 2 * math.pi / xi, bool(rec.get("echo", False)))


@dataclass(frozen=True)
class PhaseSpacePath:
    times: np.ndarray
    samples: np.ndarray  # G + iF at each time
    final_F: float
    final_G: float
    accumulated_phase: float

    @property
    def peak_displacement(self) -> float:
        return float(np.max(np.abs(self.samples)))


@dataclass(frozen=True)
class ErrorScan:
    parameter: str
    offsets: np.ndarray
    fidelities: np.ndarray
    qubit_count: int

    @property
    def peak(self) -> float:
        return float(np.max(self.fidelities))

    def rows(self):
        for off, fid in zip(self.offsets, self.fidelities):
            yield float(off), float(fid), self.parameter, self.qubit_count


def coupling(waveform: Waveform, mode: ModeSpec) -> float:
    return SQRT2 * mode.lamb_dicke * waveform.rabi


def ms_waveform(mode: ModeSpec, rabi: float, echo: bool = False) -> Waveform:
    """Single-tone MS gate: harmonic 1, weight 1, ``xi = 2 eta Omega``."""
    if rabi <= 0:
        raise GateDesignError("Rabi frequency must be positive")
    xi = 2 * mode.lamb_dicke * rabi
    return Waveform((1,), (1.0,), xi, rabi, 2 * math.pi / xi, echo)


def solve_robust_weights(harmonics, higher_order: bool = False) -> tuple:
    """Weights for the given harmonics with zero drive envelope at both gate ends.

    ``sum r_j = 0`` makes the trajectory start and stop with zero velocity, removing
    the first-order sensitivity to the gate duration and the leading carrier term.
    With ``higher_order`` the first moment ``sum n_j r_j`` is nulled as well
    (needs three or more harmonics).  Remaining freedom is spent on the largest
    entangling phase per unit drive power.  Result is scaled to ``max |r_j| = 1``.
    """
    n = np.asarray([int(h) for h in harmonics], dtype=float)
    if len(n) < 2:
        raise GateDesignError("need at least two harmonics to null the envelope")
    if len(set(n)) != len(n) or np.any(n <= 0):
        raise GateDesignError(f"harmonics must be distinct positive integers, got {tuple(harmonics)}")
    rows = [np.ones_like(n)]
    if higher_order:
        if len(n) < 3:
            raise GateDesignError("higher-order nulling needs at least three harmonics")
        rows.append(n)
    _, s, vt = np.linalg.svd(np.array(rows))
    null = vt[len(rows):].T
    # maximise sum r^2 / n within the null space
    m = null.T @ np.diag(1 / n) @ null
    _, vecs = np.linalg.eigh(m)
    r = null @ vecs[:, -1]
    r /= np.max(np.abs(r))
    first = r[np.flatnonzero(np.abs(r) > 1e-12)[0]]
    r *= np.sign(first)
    r[np.abs(r) < 1e-14] = 0.0
    r = np.where(np.abs(r - np.round(r)) < 1e-9, np.round(r), r)
    return tuple(float(x) for x in r)


def _drive(detunings, weights, scale, t):
    phase = np.multiply.outer(t, detunings)
    f = scale * (np.exp(1j * phase) @ weights)
    return f


def _integrate(detunings, weights, scale, t_end, steps):
    """Simpson/RK4 pass for alpha' = f, A' = -Re(f) Im(alpha) on a uniform grid."""
    h = t_end / steps
    t = np.linspace(0.0, t_end, steps + 1)
    f = _drive(detunings, weights, scale, t)
    fm = _drive(detunings, weights, scale, t[:-1] + h / 2)
    inc = h / 6 * (f[:-1] + 4 * fm + f[1:])
    alpha = np.concatenate([[0j], np.cumsum(inc)])
    F = alpha.imag[:-1]
    g0, gm, g1 = f.real[:-1], fm.real, f.real[1:]
    k1 = -g0 * F
    k2 = -gm * (F + h / 2 * f.imag[:-1])
    k3 = -gm * (F + h / 2 * fm.imag)
    k4 = -g1 * (F + h * fm.imag)
    a_inc = h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    A = np.concatenate([[0.0], np.cumsum(a_inc)])
    return t, alpha, A


def integrate_path(detunings, weights, scale, t_end, rtol=1e-9, min_steps=256, max_steps=2**22):
    """Path integrals with step halving until successive results agree to ``rtol``."""
    detunings = np.asarray(detunings, dtype=float)
    weights = np.asarray(weights, dtype=float)
    steps = min_steps
    prev = None
    while True:
        t, alpha, A = _integrate(detunings, weights, scale, t_end, steps)
        cur = np.array([alpha[-1].real, alpha[-1].imag, A[-1]])
        if prev is not None:
            ref = max(np.max(np.abs(alpha)), abs(A[-1]), 1e-300)
            if np.max(np.abs(cur - prev)) <= rtol * ref:
                return t, alpha, A
        if steps >= max_steps:
            return t, alpha, A
        prev = cur
        steps *= 2


def _tone_detunings(waveform: Waveform, detuning=None, mode_shift=0.0):
    xi = waveform.segment_detuning if detuning is None else detuning
    return np.asarray(waveform.harmonics, dtype=float) * xi - mode_shift


def trajectory(waveform: Waveform, mode: ModeSpec, t_end: float | None = None,
               mode_shift: float = 0.0, rtol: float = 1e-9) -> PhaseSpacePath:
    """Phase-space path of the driven mode up to ``t_end`` (default: full duration).

    ``mode_shift`` detunes the real mode frequency from the design value (rad/s).
    For echoed gates ``t_end`` beyond the first half continues in the second,
    identical half, which restarts the drive after the spin flip.
    """
    total = waveform.duration if t_end is None else float(t_end)
    if total <= 0:
        raise GateDesignError("t_end must be positive")
    c = coupling(waveform, mode)
    det = _tone_detunings(waveform, mode_shift=mode_shift)
    w = waveform.weights
    if not waveform.echo:
        t, alpha, A = integrate_path(det, w, c, total, rtol)
        return PhaseSpacePath(t, alpha, float(alpha[-1].imag), float(alpha[-1].real), float(A[-1]))
    half = waveform.duration / 2
    if total <= half:
        t, alpha, A = integrate_path(det, w, c, total, rtol)
        return PhaseSpacePath(t, alpha, float(alpha[-1].imag), float(alpha[-1].real), float(A[-1]))
    t1, a1, A1 = integrate_path(det, w, c, half, rtol)
    t2, a2, A2 = integrate_path(det, w, c, total - half, rtol)
    return _compose(t1, a1, A1, t2, a2, A2)


def _eff(alpha, A):
    # A + FG/2: the spin-spin phase entering the fidelity formula
    return A + alpha.imag * alpha.real / 2


def _compose(t1, a1, A1, t2, a2, A2) -> PhaseSpacePath:
    """Join two drive segments separated by a spin flip that commutes with the coupling."""
    end1 = a1[-1]
    alpha = a2 + end1
    # displacement-operator composition adds Im(a2 * conj(a1)) / 2 to the effective phase
    eff = _eff(a1[-1], A1[-1]) + _eff(a2, A2) + (a2.imag * end1.real - a2.real * end1.imag) / 2
    A_tail = eff - alpha.imag * alpha.real / 2
    t = np.concatenate([t1, t1[-1] + t2[1:]])
    samples = np.concatenate([a1, alpha[1:]])
    fin = alpha[-1]
    return PhaseSpacePath(t, samples, float(fin.imag), float(fin.real), float(A_tail[-1]))


def accumulated_phase(waveform: Waveform, mode: ModeSpec) -> float:
    return trajectory(waveform, mode).accumulated_phase


def phase_calibration(waveform: Waveform, mode: ModeSpec, target: float = math.pi / 2,
                      tol: float = 1e-8) -> Waveform:
    """Rescale the Rabi frequency so the accumulated phase equals ``target``.

    The phase is quadratic in Omega at fixed detuning, so one closed-form rescale
    suffices; a second pass absorbs quadrature round-off.
    """
    out = waveform
    for _ in range(3):
        a = accumulated_phase(out, mode)
        if a <= 0:
            raise GateDesignError(f"accumulated phase {a:.3g} is not positive; cannot calibrate")
        if abs(a - target) <= tol:
            return out
        out = replace(out, rabi=out.rabi * math.sqrt(target / a))
    a = accumulated_phase(out, mode)
    if abs(a - target) > tol:
        raise GateDesignError(f"phase calibration stalled at A={a!r}")
    return out


def robust_waveform(mode: ModeSpec, harmonics=(1, 3), gate_time: float = 100e-6,
                    echo: bool = False, higher_order: bool = False) -> Waveform:
    """Envelope-nulled multi-tone gate, phase calibrated for ``mode``."""
    if len(tuple(harmonics)) == 1:
        if int(tuple(harmonics)[0]) != 1:
            raise GateDesignError("a single-tone gate must use harmonic 1")
        xi = 2 * math.pi / gate_time
        wf = Waveform((1,), (1.0,), xi, xi / (2 * mode.lamb_dicke), gate_time, echo)
        return phase_calibration(wf, mode)
    weights = solve_robust_weights(harmonics, higher_order)
    xi = 2 * math.pi / gate_time
    wf = Waveform(tuple(harmonics), weights, xi, xi / (2 * mode.lamb_dicke), gate_time, echo)
    return phase_calibration(wf, mode)


def fidelity_2N(F, G, A, nbar, N):
    """Two-ion entangling-gate fidelity in an N-ion register.

    ``N`` counts the illuminated qubits.  Works elementwise on arrays.
    """
    if np.any(np.asarray(nbar) < 0):
        raise GateDesignError("nbar must be non-negative")
    if np.any(np.asarray(N) < 2):
        raise GateDesignError("N must be at least 2")
    F, G, A, nbar, N = map(np.asarray, (F, G, A, nbar, N))
    d = (F**2 + G**2) * (nbar + 0.5)
    x = A + F * G / 2 - np.pi / 2
    out = (4 * np.exp(-d / 2) * np.cos(N * x) * np.cos(x)
           + np.exp(-2 * d) * np.cos(2 * N * x) + 3) / 8
    return out if out.ndim else float(out)


def path_fidelity(path: PhaseSpacePath, nbar: float, N: int = 2) -> float:
    return fidelity_2N(path.final_F, path.final_G, path.accumulated_phase, nbar, N)


SCAN_PARAMETERS = ("gate_time", "gate_time_setpoint", "mode_freq")


def perturbed_path(waveform: Waveform, mode: ModeSpec, parameter: str, offset: float) -> PhaseSpacePath:
    """Trajectory under one error.

    gate_time
        fractional error in how long the drive runs; tones unchanged.  For echoed
        gates each half runs ``1 + offset`` of its nominal length.
    gate_time_setpoint
        fractional error in the gate-time setting, with the detuning following
        ``xi = 2 pi / T`` and the Rabi frequency left at its calibrated value.
    mode_freq
        absolute shift of the mode frequency (rad/s); every tone detuning moves by it.
    """
    if parameter == "gate_time":
        if not waveform.echo:
            return trajectory(waveform, mode, waveform.duration * (1 + offset))
        c = coupling(waveform, mode)
        det = _tone_detunings(waveform)
        seg = waveform.duration / 2 * (1 + offset)
        t1, a1, A1 = integrate_path(det, waveform.weights, c, seg)
        return _compose(t1, a1, A1, t1, a1, A1)
    if parameter == "gate_time_setpoint":
        return trajectory(waveform.with_gate_time(waveform.gate_time * (1 + offset)), mode)
    if parameter == "mode_freq":
        if not waveform.echo:
            return trajectory(waveform, mode, mode_shift=offset)
        c = coupling(waveform, mode)
        det = _tone_detunings(waveform, mode_shift=offset)
        t1, a1, A1 = integrate_path(det, waveform.weights, c, waveform.duration / 2)
        return _compose(t1, a1, A1, t1, a1, A1)
    raise GateDesignError(f"unknown scan parameter {parameter!r}; expected one of {SCAN_PARAMETERS}")


def robustness_scan(waveform: Waveform, mode: ModeSpec, parameter: str, offsets, N: int = 2,
                    nbar: float | None = None) -> ErrorScan:
    offsets = np.asarray(offsets, dtype=float)
    nb = mode.thermal_occupation if nbar is None else nbar
    fids = np.array([path_fidelity(perturbed_path(waveform, mode, parameter, o), nb, N)
                     for o in offsets])
    return ErrorScan(parameter, offsets, np.clip(fids, 0.0, 1.0), int(N))


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
