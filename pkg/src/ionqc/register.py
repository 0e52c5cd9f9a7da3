"""Pure-state simulator for a register of four-level ions.

Each ion carries the levels

====  ===========  =====================
idx   label        level
====  ===========  =====================
0     ``1``        S(1/2, +1/2), bright
1     ``1~``       S(1/2, -1/2), bright
2     ``0``        D(5/2, +3/2), dark
3     ``0~``       D(5/2, -3/2), dark
====  ===========  =====================

The optical qubit is the pair (``1``, ``0``); Pauli operators on it use ``|1>`` as
the +1 eigenstate of Z.  A hidden ion stores its qubit on (``0~``, ``0``).
Operations return new :class:`RegisterState` objects and never mutate inputs.

Classical noise is sampled per shot: a :class:`NoiseTrace` is one realisation of
the magnetic field fluctuation, shared by all ions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter

L1, L1T, L0, L0T = 0, 1, 2, 3
LEVELS = 4
OPTICAL = (L1, L0)
BRIGHT = (L1, L1T)
DARK = (L0, L0T)

D_LIFETIME = 0.390
S_SENSITIVITY = 2.802e6  # Hz/G between the two S Zeeman levels
D_SENSITIVITY = 1.68e6  # Hz/G between adjacent D(5/2) Zeeman levels
# level shifts in units of (Hz/G): m_j times the per-level splitting
MAGNETIC_SHIFTS = np.array([0.5 * S_SENSITIVITY, -0.5 * S_SENSITIVITY,
                            1.5 * D_SENSITIVITY, -1.5 * D_SENSITIVITY])

PX = np.array([[0, 1], [1, 0]], dtype=complex)
PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
PZ = np.diag([1.0, -1.0]).astype(complex)


class RegisterError(ValueError):
    pass


def sigma_phi(phi):
    return math.cos(phi) * PX + math.sin(phi) * PY


@dataclass(frozen=True)
class RegisterState:
    ion_count: int
    amplitudes: np.ndarray
    hidden: frozenset = frozenset()
    classical_record: tuple = ()  # ((label, bits), ...) in measurement order

    @classmethod
    def ground(cls, ion_count: int) -> "RegisterState":
        amp = np.zeros(LEVELS**ion_count, dtype=complex)
        amp[0] = 1.0
        return cls(ion_count, amp)

    @classmethod
    def from_levels(cls, levels) -> "RegisterState":
        levels = list(levels)
        amp = np.zeros(LEVELS ** len(levels), dtype=complex)
        amp[np.ravel_multi_index(levels, (LEVELS,) * len(levels))] = 1.0
        return cls(len(levels), amp)

    @classmethod
    def from_qubits(cls, vec) -> "RegisterState":
        """Embed an optical-qubit state vector (basis order ``|1>``, ``|0>`` per ion)."""
        vec = np.asarray(vec, dtype=complex)
        n = int(round(math.log2(len(vec))))
        t = np.zeros((LEVELS,) * n, dtype=complex)
        t[np.ix_(*[list(OPTICAL)] * n)] = vec.reshape((2,) * n)
        return cls(n, t.ravel())

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((LEVELS,) * self.ion_count)

    @property
    def record(self) -> dict:
        return dict(self.classical_record)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def qubit_vector(self, ions=None) -> np.ndarray:
        """Optical-subspace amplitudes of ``ions`` (all others must be fixed to one level)."""
        ions = list(range(self.ion_count)) if ions is None else list(ions)
        t = self.tensor
        sub = t[np.ix_(*[list(OPTICAL) if i in ions else list(range(LEVELS))
                         for i in range(self.ion_count)])]
        rest = [i for i in range(self.ion_count) if i not in ions]
        sub = np.moveaxis(sub, list(ions), list(range(len(ions))))
        sub = sub.reshape(2 ** len(ions), -1)
        if not rest:
            return sub[:, 0]
        sv = np.linalg.svd(sub, compute_uv=False)
        if len(sv) > 1 and sv[1] > 1e-9:
            raise RegisterError("selected ions are entangled with the rest of the register")
        col = sub[:, np.argmax(np.linalg.norm(sub, axis=0))]
        return col / np.linalg.norm(col) * sv[0]

    def level_populations(self, ion: int) -> np.ndarray:
        t = np.abs(self.tensor) ** 2
        axes = tuple(a for a in range(self.ion_count) if a != ion)
        return t.sum(axis=axes) if axes else t

    def reduced_density(self, ions) -> np.ndarray:
        """Reduced density matrix over the full 4-level space of ``ions``."""
        ions = list(ions)
        t = np.moveaxis(self.tensor, ions, list(range(len(ions))))
        m = t.reshape(LEVELS ** len(ions), -1)
        return m @ m.conj().T

    def qubit_density(self, ions) -> np.ndarray:
        """Reduced density matrix on the optical subspace of ``ions``."""
        ions = list(ions)
        rho = self.reduced_density(ions)
        keep = [np.ravel_multi_index(c, (LEVELS,) * len(ions))
                for c in itertools.product(OPTICAL, repeat=len(ions))]
        return rho[np.ix_(keep, keep)]

    @classmethod
    def prepare(cls, ion_count: int, prep_error: float = 0.0, rng=None) -> "RegisterState":
        """All ions in ``|1>``; each independently lands in ``|0>`` with ``prep_error``."""
        levels = [L1] * ion_count
        if prep_error and rng is not None:
            levels = [L0 if rng.random() < prep_error else L1 for _ in range(ion_count)]
        return cls.from_levels(levels)

    def _with(self, amplitudes=None, **kw):
        return replace(self, amplitudes=self.amplitudes if amplitudes is None else amplitudes, **kw)


def _apply_local(state: RegisterState, ion: int, op: np.ndarray) -> RegisterState:
    t = np.tensordot(op, state.tensor, axes=(1, ion))
    t = np.moveaxis(t, 0, ion)
    return state._with(np.ascontiguousarray(t).ravel())


def _embed_optical(u2):
    u = np.eye(LEVELS, dtype=complex)
    u[np.ix_(OPTICAL, OPTICAL)] = u2
    return u


def _check_ions(state, ions):
    ions = list(range(state.ion_count)) if ions is None else list(ions)
    for i in ions:
        if not 0 <= i < state.ion_count:
            raise RegisterError(f"ion index {i} out of range")
    return ions


def rotation(phi: float, theta: float) -> np.ndarray:
    """exp(i theta/2 sigma_phi) on one qubit."""
    return math.cos(theta / 2) * np.eye(2) + 1j * math.sin(theta / 2) * sigma_phi(phi)


def apply_global(state: RegisterState, phi: float, theta: float, ions=None) -> RegisterState:
    """Resonant rotation exp(i theta/2 sum sigma_phi) on the optical pair of each ion.

    ``ions`` restricts the rotation (individually addressed pulse).  Levels outside
    the optical pair are untouched, so ``1~`` and ``0~`` populations do not move.
    """
    u = _embed_optical(rotation(phi, theta))
    for i in _check_ions(state, ions):
        state = _apply_local(state, i, u)
    return state


@lru_cache(maxsize=64)
def _ms_unitary(k: int, phi: float, theta: float) -> np.ndarray:
    s = sigma_phi(phi)
    dim = 2**k
    h = np.zeros((dim, dim), dtype=complex)
    for i, j in itertools.combinations(range(k), 2):
        ops = [np.eye(2)] * k
        ops[i] = s
        ops[j] = s
        term = ops[0]
        for o in ops[1:]:
            term = np.kron(term, o)
        h += term
    return expm(1j * theta / 2 * h)


def optical_participants(state: RegisterState, tol: float = 1e-12) -> list:
    """Ions that are not hidden and have no population outside the optical pair."""
    out = []
    for i in range(state.ion_count):
        if i in state.hidden:
            continue
        p = state.level_populations(i)
        if p[L1T] + p[L0T] <= tol:
            out.append(i)
    return out


def apply_ms(state: RegisterState, phi: float, theta: float, participants=None) -> RegisterState:
    """Entangling operation exp(i theta/2 sum_{i<j} sigma_phi sigma_phi) on ``participants``.

    By default every ion that is neither hidden nor parked in ``1~`` takes part;
    such ions are spectrally decoupled from the gate drive.
    """
    parts = optical_participants(state) if participants is None else _check_ions(state, participants)
    for i in parts:
        p = state.level_populations(i)
        if i in state.hidden or p[L1T] + p[L0T] > 1e-12:
            raise RegisterError(f"ion {i} has population outside its optical qubit")
    k = len(parts)
    if k < 2:
        return state
    u = _ms_unitary(k, float(phi), float(theta))
    t = np.moveaxis(state.tensor, parts, list(range(k)))
    idx = np.ix_(*[list(OPTICAL)] * k)
    sub = t[idx]
    shape = sub.shape
    t = t.copy()
    t[idx] = (u @ sub.reshape(2**k, -1)).reshape(shape)
    t = np.moveaxis(t, list(range(k)), parts)
    return state._with(np.ascontiguousarray(t).ravel())


def apply_lightshift_z(state: RegisterState, ion: int, theta: float,
                       crosstalk: float = 0.0) -> RegisterState:
    """exp(i theta/2 Z) on ``ion``; nearest neighbours get ``theta * crosstalk``.

    ``crosstalk`` is the light-shift ratio R_ls.
    """
    _check_ions(state, [ion])
    state = _apply_local(state, ion, _embed_optical(np.diag(np.exp(1j * theta / 2 * np.array([1, -1])))))
    if crosstalk:
        for j in (ion - 1, ion + 1):
            if 0 <= j < state.ion_count:
                ph = np.exp(1j * theta * crosstalk / 2 * np.array([1, -1]))
                state = _apply_local(state, j, _embed_optical(np.diag(ph)))
    return state


_HIDE = np.eye(LEVELS, dtype=complex)[[L0T, L1T, L0, L1]]  # swaps 1 <-> 0~
_PARK = np.eye(LEVELS, dtype=complex)[[L1T, L1, L0, L0T]]  # swaps 1 <-> 1~
_D_FLIP = np.eye(LEVELS, dtype=complex)[[L1, L1T, L0T, L0]]  # swaps 0 <-> 0~


def _pair_pauli(rng, a, b):
    """Random non-identity Pauli on the two-level pair (a, b), as a 4x4 matrix."""
    p = (PX, PY, PZ)[rng.integers(3)]
    u = np.eye(LEVELS, dtype=complex)
    u[np.ix_((a, b), (a, b))] = p
    return u


def hide(state: RegisterState, ion: int, error: float = 0.0, rng=None) -> RegisterState:
    """Move the optical qubit of ``ion`` onto (0~, 0): ``|1> -> |0~>``, ``|0>`` stays.

    ``error`` is a depolarising probability applied to the stored qubit (needs ``rng``).
    """
    _check_ions(state, [ion])
    if ion in state.hidden:
        raise RegisterError(f"ion {ion} is already hidden")
    p = state.level_populations(ion)
    if p[L1T] + p[L0T] > 1e-12:
        raise RegisterError(f"ion {ion} is not in its optical qubit")
    state = _apply_local(state, ion, _HIDE)._with(hidden=state.hidden | {ion})
    if error and rng is not None and rng.random() < error:
        state = _apply_local(state, ion, _pair_pauli(rng, L0T, L0))
    return state


def unhide(state: RegisterState, ion: int, error: float = 0.0, rng=None) -> RegisterState:
    """Inverse of :func:`hide`."""
    if ion not in state.hidden:
        raise RegisterError(f"ion {ion} is not hidden")
    p = state.level_populations(ion)
    if p[L1] + p[L1T] > 1e-12:
        raise RegisterError(f"hidden ion {ion} has population outside (0~, 0)")
    if error and rng is not None and rng.random() < error:
        state = _apply_local(state, ion, _pair_pauli(rng, L0T, L0))
    return _apply_local(state, ion, _HIDE)._with(hidden=state.hidden - {ion})


def park(state: RegisterState, ion: int) -> RegisterState:
    """Swap ``|1>`` and ``|1~>`` so a spectator ion drops out of the gate drive."""
    _check_ions(state, [ion])
    return _apply_local(state, ion, _PARK)


unpark = park


def d_flip(state: RegisterState, ions) -> RegisterState:
    """RF pi pulse on the D(5/2) manifold: ``|0> <-> |0~>``."""
    for i in _check_ions(state, ions):
        state = _apply_local(state, i, _D_FLIP)
    return state


# --- measurement -----------------------------------------------------------

def decay_probability(exposure: float, lifetime: float = D_LIFETIME) -> float:
    return -math.expm1(-exposure / lifetime)


def measure_fluorescence(state: RegisterState, ions, exposure: float = 1e-3, rng=None,
                         label: str | None = None, lifetime: float = D_LIFETIME,
                         bright_error: float = 0.0, forced=None):
    """Projective S-vs-D readout of ``ions``.

    Returns ``(bits, new_state)`` where ``bits`` is the reported string (``"1"`` =
    bright) in the order of ``ions``.  A dark ion decays during the exposure with
    probability ``1 - exp(-exposure / lifetime)``; it then reads bright and is left
    in the S manifold.  ``forced`` replays reported bits instead of sampling;
    a decay is never replayed, so forcing is meant for decay-free runs.
    """
    ions = _check_ions(state, ions)
    if not ions:
        raise RegisterError("measure at least one ion")
    if rng is None and forced is None:
        rng = np.random.default_rng()
    p_decay = decay_probability(exposure, lifetime) if lifetime and math.isfinite(lifetime) else 0.0
    t = state.tensor.copy()
    bits = []
    for k, ion in enumerate(ions):
        pop = (np.abs(t) ** 2).sum(axis=tuple(a for a in range(state.ion_count) if a != ion)) \
            if state.ion_count > 1 else np.abs(t) ** 2
        p_bright = float(pop[L1] + pop[L1T])
        if forced is not None:
            bright = forced[k] == "1"
            if (p_bright if bright else 1 - p_bright) < 1e-12:
                raise RegisterError(f"forced outcome {forced[k]} on ion {ion} has zero probability")
        else:
            bright = rng.random() < p_bright
        keep = BRIGHT if bright else DARK
        mask = np.zeros(LEVELS, dtype=bool)
        mask[list(keep)] = True
        shape = [1] * state.ion_count
        shape[ion] = LEVELS
        t = t * mask.reshape(shape)
        t /= np.linalg.norm(t)
        reported = bright
        if forced is None:
            if not bright and p_decay and rng.random() < p_decay:
                t = np.moveaxis(np.tensordot(np.eye(LEVELS)[[L0, L0T, L1, L1T]].T @ np.diag([0, 0, 1, 1]),
                                             t, axes=(1, ion)), 0, ion)
                reported = True
            elif bright and bright_error and rng.random() < bright_error:
                reported = False
        bits.append("1" if reported else "0")
    out = "".join(bits)
    rec = state.classical_record
    if label is not None:
        if label in dict(rec):
            raise RegisterError(f"measurement label {label!r} already recorded")
        rec = rec + ((label, out),)
    return out, state._with(np.ascontiguousarray(t).ravel(), classical_record=rec)


# --- magnetic dephasing ----------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Magnetic-field noise seen by all ions.

    ``kind`` is ``"static"`` (one Gaussian field value per shot) or ``"ou"``
    (Ornstein-Uhlenbeck process with ``correlation_time``).  The rms amplitude is
    set so that free Ramsey decay of the optical pair and of the hidden pair reaches
    1/e at the configured coherence times.
    """

    optical_coherence_time: float = 2e-3
    hidden_pair_coherence_time: float = 500e-6
    kind: str = "ou"
    correlation_time: float = 0.4e-3
    seed: int | None = None
    hide_error: float = 0.0
    gate_error: float = 0.0
    prep_error: float = 0.0
    dt: float = 1e-6
    level_shifts: tuple | None = None  # override per-level coupling (rad/s per unit field)

    def __post_init__(self):
        if self.optical_coherence_time <= 0 or self.hidden_pair_coherence_time <= 0:
            raise RegisterError("coherence times must be positive")
        if self.kind not in ("static", "ou", "none"):
            raise RegisterError(f"unknown noise kind {self.kind!r}")
        if self.kind == "ou" and self.correlation_time <= 0:
            raise RegisterError("correlation time must be positive")

    def _sigma(self, tau):
        """rms detuning (rad/s) whose Ramsey decay reaches 1/e at ``tau``."""
        if self.kind == "static":
            return math.sqrt(2) / tau
        tc = self.correlation_time
        return 1 / (tc * math.sqrt(tau / tc - 1 + math.exp(-tau / tc)))

    @property
    def level_coefficients(self) -> np.ndarray:
        """Phase rate of each level per unit field (rad/s)."""
        if self.kind == "none":
            return np.zeros(LEVELS)
        if self.level_shifts is not None:
            return np.asarray(self.level_shifts, dtype=float)
        s_opt = self._sigma(self.optical_coherence_time)
        s_hid = self._sigma(self.hidden_pair_coherence_time)
        scale = s_opt / (MAGNETIC_SHIFTS[L0] - MAGNETIC_SHIFTS[L1])
        k1 = MAGNETIC_SHIFTS[L1] * scale
        k1t = MAGNETIC_SHIFTS[L1T] * scale
        k0 = k1 + s_opt
        k0t = k0 - s_hid
        return np.array([k1, k1t, k0, k0t])

    def pair_sigma(self, a: int, b: int) -> float:
        k = self.level_coefficients
        return abs(k[b] - k[a])

    def sample(self, rng, duration: float) -> "NoiseTrace":
        return NoiseTrace.sample(self, rng, duration)


@dataclass(frozen=True)
class NoiseTrace:
    """One realisation of the unit-variance field b(t) on [0, duration]."""

    times: np.ndarray
    cumulative: np.ndarray  # integral of b from 0
    coefficients: np.ndarray
    static_value: float | None = None

    @classmethod
    def sample(cls, model: NoiseModel, rng, duration: float) -> "NoiseTrace":
        coef = model.level_coefficients
        if model.kind == "none":
            return cls(np.array([0.0, max(duration, 1e-12)]), np.zeros(2), coef, 0.0)
        if model.kind == "static":
            b = float(rng.standard_normal())
            return cls(np.array([0.0]), np.array([0.0]), coef, b)
        n = max(2, int(math.ceil(duration / model.dt)) + 1)
        t = np.linspace(0.0, (n - 1) * model.dt, n)
        a = math.exp(-model.dt / model.correlation_time)
        z = rng.standard_normal(n)
        z[1:] *= math.sqrt(1 - a * a)
        # exact AR(1) discretisation of a unit-variance OU process
        b = lfilter([1.0], [1.0, -a], z)
        cum = np.concatenate([[0.0], np.cumsum((b[1:] + b[:-1]) / 2 * model.dt)])
        return cls(t, cum, coef)

    def integral(self, t0: float, t1: float) -> float:
        if self.static_value is not None:
            return self.static_value * (t1 - t0)
        if t1 > self.times[-1] + 1e-12:
            raise RegisterError("noise trace too short for the requested window")
        return float(np.interp(t1, self.times, self.cumulative) - np.interp(t0, self.times, self.cumulative))


def apply_dephasing(state: RegisterState, trace: NoiseTrace, t0: float, t1: float,
                    ions=None) -> RegisterState:
    """Free precession of every level of ``ions`` in the field between ``t0`` and ``t1``."""
    if t1 <= t0:
        return state
    phase = np.exp(-1j * trace.coefficients * trace.integral(t0, t1))
    op = np.diag(phase)
    for i in _check_ions(state, ions):
        state = _apply_local(state, i, op)
    return state


@dataclass(frozen=True)
class EchoSchedule:
    """Double CPMG: ``pulse_count // 2`` D-manifold flips inside each of two windows."""

    pulse_count: int = 4
    tau_e: float = 700e-6
    tau_r: float = 600e-6
    enabled: bool = True

    def __post_init__(self):
        if self.pulse_count % 2:
            raise RegisterError("CPMG pulse count must be even")
        if self.tau_e <= 0 or self.tau_r <= 0:
            raise RegisterError("echo window durations must be positive")

    def pulse_times(self, tau_e=None, tau_r=None) -> list:
        te = self.tau_e if tau_e is None else tau_e
        tr = self.tau_r if tau_r is None else tau_r
        if not self.enabled or self.pulse_count == 0:
            return []
        k = self.pulse_count // 2
        first = [(j + 0.5) * te / k for j in range(k)]
        second = [te + (j + 0.5) * tr / k for j in range(k)]
        return first + second


def cpmg_echo(state: RegisterState, schedule: EchoSchedule, trace: NoiseTrace, t0: float = 0.0,
              ions=None, tau_e=None, tau_r=None) -> RegisterState:
    """Dephasing of hidden ions over the exposure and readout windows with CPMG flips."""
    ions = sorted(state.hidden) if ions is None else _check_ions(state, ions)
    for i in ions:
        if i not in state.hidden:
            raise RegisterError(f"CPMG acts on hidden ions only; ion {i} is not hidden")
    te = schedule.tau_e if tau_e is None else tau_e
    tr = schedule.tau_r if tau_r is None else tau_r
    t = t0
    for p in schedule.pulse_times(te, tr):
        state = apply_dephasing(state, trace, t, t0 + p, ions)
        state = d_flip(state, ions)
        t = t0 + p
    return apply_dephasing(state, trace, t, t0 + te + tr, ions)


def ms_with_dephasing(state: RegisterState, phi: float, theta: float, trace: NoiseTrace,
                      t0: float, duration: float, participants=None, echo: bool = True,
                      gate_error: float = 0.0, rng=None) -> RegisterState:
    """Ideal entangling unitary dressed with the dephasing accumulated during the gate.

    With ``echo`` the mid-gate spin flip reverses the sign of the second half's
    phase, so only the difference of the two half-gate field integrals survives.
    ``gate_error`` injects a random two-qubit Pauli on the participants with that
    probability.
    """
    parts = optical_participants(state) if participants is None else list(participants)
    state = apply_ms(state, phi, theta, parts)
    if echo:
        net = trace.integral(t0, t0 + duration / 2) - trace.integral(t0 + duration / 2, t0 + duration)
    else:
        net = trace.integral(t0, t0 + duration)
    op = np.diag(np.exp(-1j * trace.coefficients * net))
    for i in parts:
        state = _apply_local(state, i, op)
    if gate_error and rng is not None and rng.random() < gate_error and len(parts) >= 2:
        a, b = rng.choice(parts, size=2, replace=False)
        paulis = (np.eye(2), PX, PY, PZ)
        while True:
            ia, ib = rng.integers(4, size=2)
            if ia or ib:
                break
        state = _apply_local(state, int(a), _embed_optical(paulis[ia]))
        state = _apply_local(state, int(b), _embed_optical(paulis[ib]))
    return state


def seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def shot_rngs(seed, shots: int):
    """Independent per-shot generators derived from one root seed."""
    return [np.random.default_rng(s) for s in seed_sequence(seed).spawn(shots)]


def spam_correct(raw: float, *factors: float) -> float:
    """Divide independently measured preparation/measurement success factors out of ``raw``."""
    out = raw
    for f in factors:
        if f <= 0:
            raise RegisterError("SPAM factors must be positive")
        out /= f
    return out
