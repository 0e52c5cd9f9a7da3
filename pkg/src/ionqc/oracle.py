"""Brute-force spin-boson simulation on a truncated Fock space.

This is the reference the analytic fidelity formula is checked against.  The
qubits couple to one motional mode; the state is integrated with fixed-step RK4
in the interaction picture.  Thermal initial states are handled as an explicit
mixture of Fock states, and quasi-static dephasing as a Gauss-Hermite mixture of
detunings, so results carry no Monte-Carlo noise.

Basis conventions: per qubit, index 0 is ``|1>`` (S level, bright) and index 1 is
``|0>`` (D level).  Basis labels are bit strings such as ``"11"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .gates import ModeSpec, Waveform

X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |0><1| : S -> D
LASER = -1j * SIGMA_PLUS  # phase chosen so the sideband term is along X


class TruncationError(RuntimeError):
    """Fock-space cutoff too small for the requested evolution."""


@dataclass
class OracleConfig:
    fock_cutoff: int = 20
    lamb_dicke_order: str = "first"  # "first" | "exact"
    carrier_enabled: bool = False
    thermal_nbar: float | None = None  # None: take it from the ModeSpec
    time_grid: tuple | None = None  # None: [0, duration]
    dephasing_sigma: float = 0.0  # rms quasi-static qubit detuning, rad/s
    dephasing_nodes: int = 9
    step_factor: float = 0.01  # max phase advance per RK4 step
    thermal_tail: float = 1e-6
    guard: float = 1e-8
    max_cutoff: int = 400
    richardson: bool = False

    def __post_init__(self):
        if self.fock_cutoff < 4:
            raise ValueError("fock_cutoff must be >= 4")
        if self.lamb_dicke_order not in ("first", "exact"):
            raise ValueError("lamb_dicke_order must be 'first' or 'exact'")
        if self.time_grid is not None:
            g = np.asarray(self.time_grid, dtype=float)
            if g[0] != 0 or np.any(np.diff(g) <= 0):
                raise ValueError("time grid must start at 0 and increase strictly")


@dataclass
class OracleResult:
    times: np.ndarray
    labels: list
    populations: np.ndarray  # (len(times), 2**Nq)
    reduced: np.ndarray  # (len(times), 2**Nq, 2**Nq) spin density matrices
    norms: np.ndarray  # mixture-weighted norm at each time
    fock_cutoff: int
    top_population: float
    richardson_error: float | None = None
    extra: dict = field(default_factory=dict)

    def population(self, label: str) -> np.ndarray:
        return self.populations[:, self.labels.index(label)]


def basis_labels(nq: int) -> list:
    return ["".join("1" if (k >> (nq - 1 - i)) & 1 == 0 else "0" for i in range(nq))
            for k in range(2**nq)]


def _collective(op, nq):
    dim = 2**nq
    out = np.zeros((dim, dim), dtype=complex)
    for i in range(nq):
        term = np.array([[1.0 + 0j]])
        for k in range(nq):
            term = np.kron(term, op if k == i else np.eye(2))
        out += term
    return out


def thermal_weights(nbar: float, tail: float = 1e-6) -> np.ndarray:
    """Thermal Fock populations truncated once the cumulative weight reaches 1 - tail."""
    if nbar <= 0:
        return np.array([1.0])
    ratio = nbar / (nbar + 1)
    n_cut = max(0, math.ceil(math.log(tail) / math.log(ratio)) - 1)
    p = (1 - ratio) * ratio ** np.arange(n_cut + 1)
    return p / p.sum()


class _Hamiltonian:
    def __init__(self, waveform: Waveform, mode: ModeSpec, nq: int, cfg: OracleConfig,
                 n_max: int, deltas: np.ndarray, mode_shift: float):
        self.nq = nq
        self.n_max = n_max
        self.order = cfg.lamb_dicke_order
        self.carrier = cfg.carrier_enabled
        self.weights = np.asarray(waveform.weights, dtype=float)
        xi = waveform.segment_detuning
        self.detunings = np.asarray(waveform.harmonics, dtype=float) * xi - mode_shift
        self.tone_freqs = mode.mode_freq + np.asarray(waveform.harmonics, dtype=float) * xi
        self.nu = mode.mode_freq + mode_shift
        self.sideband = mode.lamb_dicke * waveform.rabi / 2
        self.rabi = waveform.rabi
        self.eta = mode.lamb_dicke
        self.Sx = _collective(X, nq)
        self.K = _collective(LASER + LASER.conj().T, nq)
        self.C = _collective(LASER, nq)
        self.zsum = np.real(np.diag(_collective(Z, nq)))
        self.deltas = deltas  # per column
        n = np.arange(n_max + 1)
        self.sq = np.sqrt(n[1:]).astype(float)
        if self.order == "exact":
            a = np.diag(self.sq, 1)
            self.D0 = expm(1j * self.eta * (a + a.T))
            self.nvec = n

    def omega_max(self):
        s = float(np.max(np.abs(np.linalg.eigvalsh(self.Sx)))) if self.nq else 0
        w = float(np.max(np.abs(self.detunings)))
        w += 2 * self.sideband * np.sum(np.abs(self.weights)) * s * math.sqrt(self.n_max + 1)
        if self.carrier or self.order == "exact":
            w += float(np.max(self.tone_freqs)) + 2 * self.rabi * np.sum(np.abs(self.weights)) * s
        if self.order == "exact":
            w += 2 * self.nu
        if self.deltas.size:
            w += float(np.max(np.abs(self.deltas))) * self.nq / 2
        return w

    def apply(self, t, psi):
        """-i H(t) psi for psi of shape (spin, fock, columns)."""
        out = np.zeros_like(psi)
        if self.order == "first":
            f = self.sideband * np.sum(self.weights * np.exp(1j * self.detunings * t))
            sp = np.tensordot(self.Sx, psi, axes=(1, 0))
            out[:, 1:] += f * self.sq[None, :, None] * sp[:, :-1]
            out[:, :-1] += np.conj(f) * self.sq[None, :, None] * sp[:, 1:]
            if self.carrier:
                g = self.rabi * np.sum(self.weights * np.cos(self.tone_freqs * t))
                out += g * np.tensordot(self.K, psi, axes=(1, 0))
        else:
            g = self.rabi * np.sum(self.weights * np.cos(self.tone_freqs * t))
            ph = np.exp(-1j * self.nu * t * self.nvec)
            # D(t) = U D0 U^dag with U = exp(-i nu t a^dag a)
            Dt = (ph[:, None] * self.D0) * np.conj(ph)[None, :]
            cp = np.tensordot(self.C, psi, axes=(1, 0))
            cdp = np.tensordot(self.C.conj().T, psi, axes=(1, 0))
            out += g * (np.einsum("mn,snc->smc", Dt, cp) + np.einsum("mn,snc->smc", Dt.conj().T, cdp))
        if self.deltas.size:
            out += 0.5 * self.zsum[:, None, None] * self.deltas[None, None, :] * psi
        return -1j * out


def _rk4(ham, psi, t0, t1, h_target, drive_t0):
    n = max(1, math.ceil((t1 - t0) / h_target - 1e-9))
    h = (t1 - t0) / n
    t = t0 - drive_t0
    for _ in range(n):
        k1 = ham.apply(t, psi)
        k2 = ham.apply(t + h / 2, psi + h / 2 * k1)
        k3 = ham.apply(t + h / 2, psi + h / 2 * k2)
        k4 = ham.apply(t + h, psi + h * k3)
        psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return psi


def _flip(psi, nq):
    p = np.array([[1.0 + 0j]])
    for _ in range(nq):
        p = np.kron(p, X)
    return np.tensordot(p, psi, axes=(1, 0))


def _run(waveform, mode, nq, cfg, grid, n_max, mode_shift, step_factor):
    nbar = mode.thermal_occupation if cfg.thermal_nbar is None else cfg.thermal_nbar
    pth = thermal_weights(nbar, cfg.thermal_tail)
    if len(pth) > n_max - 2:
        raise TruncationError("thermal cutoff exceeds Fock space")
    if cfg.dephasing_sigma > 0:
        x, wx = np.polynomial.hermite.hermgauss(cfg.dephasing_nodes)
        dvals = math.sqrt(2) * cfg.dephasing_sigma * x
        dw = wx / math.sqrt(math.pi)
    else:
        dvals, dw = np.zeros(0), np.ones(1)
    nd = max(1, len(dvals))
    cols = len(pth) * nd
    weights = np.repeat(pth, nd) * np.tile(dw, len(pth))
    deltas = np.tile(dvals, len(pth)) if len(dvals) else np.zeros(0)
    ham = _Hamiltonian(waveform, mode, nq, cfg, n_max, deltas, mode_shift)
    dim_s = 2**nq
    psi = np.zeros((dim_s, n_max + 1, cols), dtype=complex)
    for k in range(len(pth)):
        psi[0, k, k * nd:(k + 1) * nd] = 1.0
    h_target = step_factor / ham.omega_max()

    half = waveform.duration / 2 if waveform.echo else None
    pops, reds, norms = [], [], []
    top = 0.0
    t_now = 0.0
    flipped = False

    def record(state):
        nonlocal top
        st = _flip(state, nq) if flipped else state
        prob = np.abs(st) ** 2
        pops.append(np.einsum("snc,c->s", prob, weights))
        reds.append(np.einsum("snc,tnc,c->st", st, st.conj(), weights))
        norms.append(float(np.einsum("snc,c->", prob, weights)))
        top = max(top, float(np.einsum("snc,c->", prob[:, -2:], weights)))

    for t in grid:
        if half is not None and not flipped and t > half:
            psi = _rk4(ham, psi, t_now, half, h_target, 0.0)
            psi = _flip(psi, nq)
            t_now, flipped = half, True
        if t > t_now:
            psi = _rk4(ham, psi, t_now, t, h_target, half if flipped else 0.0)
            t_now = t
        record(psi)
    return np.array(pops), np.array(reds), np.array(norms), top


def _peak_loop(waveform, mode_shift, t_end):
    # largest |integral of the tone sum| over the run; sets the Fock-space margin
    d = np.asarray(waveform.harmonics, dtype=float) * waveform.segment_detuning - mode_shift
    t = np.linspace(0.0, t_end, 2048)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(d == 0, t[:, None], (np.exp(1j * np.multiply.outer(t, d)) - 1) / (1j * d))
    loop = np.abs(terms @ np.asarray(waveform.weights, dtype=float))
    return float(np.max(loop)) * (2 if waveform.echo else 1)


def evolve(waveform: Waveform, mode: ModeSpec, nq: int, config: OracleConfig | None = None,
           mode_shift: float = 0.0) -> OracleResult:
    """Populations and reduced spin states of ``nq`` ions, initially ``|1...1>``.

    The Fock cutoff is raised above the thermal mixture and doubled whenever the
    two highest Fock levels pick up more than ``config.guard`` population.
    """
    cfg = config or OracleConfig()
    if nq < 1 or nq > 6:
        raise ValueError("oracle supports 1 to 6 qubits")
    grid = np.asarray(cfg.time_grid if cfg.time_grid is not None else (0.0, waveform.duration), dtype=float)
    nbar = mode.thermal_occupation if cfg.thermal_nbar is None else cfg.thermal_nbar
    n_cut = len(thermal_weights(nbar, cfg.thermal_tail)) - 1
    beta = nq * mode.lamb_dicke * waveform.rabi / 2 * _peak_loop(waveform, mode_shift, grid[-1])
    n_max = max(cfg.fock_cutoff, n_cut + int(math.ceil(6 * beta * math.sqrt(n_cut + 1) + 4 * beta**2)) + 8)
    if n_max > cfg.max_cutoff:
        raise TruncationError(f"required Fock cutoff {n_max} exceeds the limit {cfg.max_cutoff}")
    while True:
        pops, reds, norms, top = _run(waveform, mode, nq, cfg, grid, n_max, mode_shift, cfg.step_factor)
        if top < cfg.guard:
            break
        if 2 * n_max > cfg.max_cutoff:
            raise TruncationError(f"top Fock population {top:.2e} at cutoff {n_max}; limit {cfg.max_cutoff}")
        n_max *= 2
    rich = None
    if cfg.richardson:
        pops2, *_ = _run(waveform, mode, nq, cfg, grid, n_max, mode_shift, cfg.step_factor / 2)
        rich = float(np.max(np.abs(pops2 - pops)))
    return OracleResult(grid, basis_labels(nq), pops, reds, norms, n_max, top, rich)


def bell_fidelity(result: OracleResult, index: int = -1, phase: float = math.pi / 2) -> float:
    """Overlap of the reduced two-qubit state with ``(|11> + e^{i phase}|00>)/sqrt(2)``."""
    if len(result.labels) != 4:
        raise ValueError("bell_fidelity needs a two-qubit result")
    return ghz_fidelity(result, index, phase)


def ideal_ms_state(nq: int) -> np.ndarray:
    """exp(i pi/4 sum_{i<j} X_i X_j) |1...1>, the target of a calibrated gate."""
    from .register import _ms_unitary

    psi = np.zeros(2**nq, dtype=complex)
    psi[0] = 1.0
    return _ms_unitary(nq, 0.0, math.pi / 2) @ psi


def ghz_fidelity(result: OracleResult, index: int = -1, phase: float | None = None) -> float:
    """Overlap with the ideal entangled state.

    With ``phase=None`` the target is the ideal gate output; otherwise it is
    ``(|1..1> + e^{i phase}|0..0>)/sqrt(2)``.
    """
    rho = result.reduced[index]
    nq = int(round(math.log2(rho.shape[0])))
    if phase is None:
        target = ideal_ms_state(nq)
    else:
        target = np.zeros(rho.shape[0], dtype=complex)
        target[0] = 1 / math.sqrt(2)
        target[-1] = np.exp(1j * phase) / math.sqrt(2)
    return float(np.real(target.conj() @ rho @ target))


def _analysis_pulse(phi):
    s = math.cos(phi) * X + math.sin(phi) * np.array([[0, -1j], [1j, 0]])
    r = expm(1j * math.pi / 4 * s)
    return np.kron(r, r)


@dataclass
class ParityScan:
    phases: np.ndarray
    parity: np.ndarray
    amplitude: float
    populations: tuple  # (P11, P00)
    fidelity: float


def parity_scan_sim(state, phases=None) -> ParityScan:
    """Parity after a global pi/2 analysis pulse of variable phase.

    ``state`` is a two-qubit density matrix or state vector.  The fidelity
    estimate is ``(P11 + P00 + amplitude) / 2``.
    """
    rho = np.asarray(state, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    if rho.shape != (4, 4):
        raise ValueError("parity scan needs a two-qubit state")
    if phases is None:
        phases = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    phases = np.asarray(phases, dtype=float)
    zz = np.diag([1.0, -1.0, -1.0, 1.0])
    par = np.array([np.real(np.trace(zz @ u @ rho @ u.conj().T))
                    for u in map(_analysis_pulse, phases)])
    design = np.column_stack([np.cos(2 * phases), np.sin(2 * phases), np.ones_like(phases)])
    coef, *_ = np.linalg.lstsq(design, par, rcond=None)
    amp = float(math.hypot(coef[0], coef[1]))
    p11, p00 = float(np.real(rho[0, 0])), float(np.real(rho[3, 3]))
    return ParityScan(phases, par, amp, (p11, p00), (p11 + p00 + amp) / 2)
