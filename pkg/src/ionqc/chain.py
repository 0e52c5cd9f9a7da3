"""Static physics of a linear ion chain and its addressing optics.

Equilibrium positions and axial modes follow from the harmonic-plus-Coulomb
potential in the dimensionless length unit ``ell = (q^2 / (4 pi eps0 m nu^2))^(1/3)``.
All frequencies are angular (rad/s); use :func:`hz` / :func:`to_hz` at the edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.constants as const

SR88_MASS = 87.9056 * const.atomic_mass
QUBIT_WAVELENGTH = 674e-9


class ChainError(ValueError):
    """Raised for invalid chain geometry or a failed equilibrium solve."""


def hz(f):
    """Ordinary frequency (Hz) to angular (rad/s)."""
    return 2 * np.pi * np.asarray(f, dtype=float) if np.ndim(f) else 2 * math.pi * float(f)


def to_hz(w):
    return np.asarray(w, dtype=float) / (2 * np.pi) if np.ndim(w) else float(w) / (2 * math.pi)


@dataclass(frozen=True)
class TrapSpec:
    ion_count: int
    axial_freq: float  # rad/s
    ion_mass: float = SR88_MASS
    ion_charge: float = const.e

    def __post_init__(self):
        if self.ion_count < 1:
            raise ChainError(f"ion_count must be >= 1, got {self.ion_count}")
        if self.axial_freq <= 0 or self.ion_mass <= 0 or self.ion_charge <= 0:
            raise ChainError("axial_freq, ion_mass and ion_charge must be positive")

    @property
    def length_scale(self) -> float:
        k = self.ion_charge**2 / (4 * np.pi * const.epsilon_0)
        return (k / (self.ion_mass * self.axial_freq**2)) ** (1 / 3)


@dataclass(frozen=True)
class IonChain:
    trap: TrapSpec
    positions: np.ndarray  # m, ascending
    mode_freqs: np.ndarray  # rad/s, ascending; [0] is the COM mode
    mode_vectors: np.ndarray  # columns are modes
    lamb_dicke: np.ndarray  # per ion, for the selected mode
    mode_index: int = 0
    lamb_dicke_nominal: bool = True

    @property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.positions))) if len(self.positions) > 1 else math.inf

    def to_record(self) -> dict:
        return {
            "positions_m": [float(x) for x in self.positions],
            "mode_freqs_hz": [float(f) for f in to_hz(self.mode_freqs)],
            "eta": [float(e) for e in self.lamb_dicke],
            "eta_nominal": self.lamb_dicke_nominal,
        }


def _forces(u):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return -u + np.sum(np.sign(d) / d**2, axis=1)


def _hessian(u):
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    off = -2.0 / d**3
    h = off.copy()
    np.fill_diagonal(h, 1.0 - off.sum(axis=1))
    return h


def _initial_guess(n):
    # asymptotic scaling of the chain half-length ~ N^0.56 (James 1998 fit)
    if n == 1:
        return np.zeros(1)
    half = 1.0 * n**0.559
    return np.linspace(-half, half, n) * 0.9


def scaled_equilibrium(n: int, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Dimensionless equilibrium positions by damped Newton iteration."""
    if n < 1:
        raise ChainError(f"ion_count must be >= 1, got {n}")
    if n == 1:
        return np.zeros(1)
    u = _initial_guess(n)
    res = np.max(np.abs(_forces(u)))
    for _ in range(max_iter):
        step = np.linalg.solve(_hessian(u), _forces(u))
        lam = 1.0
        while lam > 1e-6:
            trial = u + lam * step
            if np.all(np.diff(trial) > 0):
                r = np.max(np.abs(_forces(trial)))
                if r < res or r < tol:
                    break
            lam /= 2
        u, res = trial, r
        if res < tol:
            break
    else:
        raise ChainError(f"equilibrium solve did not converge for N={n}; residual {res:.3e}")
    u = 0.5 * (u - u[::-1])  # enforce mirror symmetry
    return u


def equilibrium_positions(trap: TrapSpec) -> np.ndarray:
    """Ion positions (m), sorted ascending and symmetric about the trap centre."""
    return scaled_equilibrium(trap.ion_count) * trap.length_scale


def axial_normal_modes(positions, trap: TrapSpec):
    """Axial mode frequencies (rad/s, ascending) and orthonormal mode vectors (columns).

    The centre-of-mass mode comes first at exactly ``trap.axial_freq`` with a
    uniform positive eigenvector.
    """
    u = np.asarray(positions, dtype=float) / trap.length_scale
    n = len(u)
    if n != trap.ion_count:
        raise ChainError("positions do not match trap.ion_count")
    if n > 1 and np.max(np.abs(_forces(u))) > 1e-6:
        raise ChainError("positions are not an equilibrium configuration")
    h = _hessian(u) if n > 1 else np.ones((1, 1))
    evals, evecs = np.linalg.eigh(h)
    if evals[0] <= 0:
        raise ChainError("Hessian is not positive definite; positions are not a stable equilibrium")
    if abs(evals[0] - 1.0) > 1e-8:
        raise ChainError(f"lowest mode is not the COM mode (eigenvalue {evals[0]:.6g})")
    evecs = evecs * np.sign(evecs.sum(axis=0) + (evecs.sum(axis=0) == 0))
    evecs[:, 0] = 1 / np.sqrt(n)
    freqs = trap.axial_freq * np.sqrt(evals)
    freqs[0] = trap.axial_freq
    return freqs, evecs


def lamb_dicke_parameters(mode_freq, mode_vector, mass=SR88_MASS,
                          wavelength=QUBIT_WAVELENGTH, angle=0.0):
    """Per-ion Lamb-Dicke parameters ``k cos(angle) x0 |b_i|`` for one mode.

    ``x0 = sqrt(hbar / (2 m omega))`` is the single-ion ground-state extent at the mode
    frequency; ``b_i`` the ion's participation in the mode.
    """
    x0 = np.sqrt(const.hbar / (2 * mass * mode_freq))
    k = 2 * np.pi / wavelength * math.cos(angle)
    return k * x0 * np.abs(np.asarray(mode_vector, dtype=float))


def build_chain(trap: TrapSpec, mode_index: int = 0, beam_angle: float = 0.0) -> IonChain:
    pos = equilibrium_positions(trap)
    freqs, vecs = axial_normal_modes(pos, trap)
    eta = lamb_dicke_parameters(freqs[mode_index], vecs[:, mode_index], trap.ion_mass, angle=beam_angle)
    return IonChain(trap, pos, freqs, vecs, eta, mode_index)


def axial_freq_for_min_spacing(ion_count: int, min_spacing: float, mass=SR88_MASS,
                               charge=const.e) -> float:
    """Axial frequency (rad/s) at which the chain's smallest spacing equals ``min_spacing``.

    Positions scale as nu^(-2/3), so the root of the one-dimensional equation is
    closed form once the dimensionless spacing is known; a bracketing solve
    double-checks it.
    """
    from scipy.optimize import brentq

    if ion_count < 2:
        raise ChainError("need at least two ions for a spacing")
    du = float(np.min(np.diff(scaled_equilibrium(ion_count))))

    def excess(log_w):
        trap = TrapSpec(ion_count, math.exp(log_w), mass, charge)
        return du * trap.length_scale - min_spacing

    return math.exp(brentq(excess, math.log(hz(1e3)), math.log(hz(1e9)), xtol=1e-14))


# --- addressing optics -----------------------------------------------------

def diffraction_limited_waist_diameter(wavelength, numerical_aperture):
    """1/e^2 intensity diameter ``2 lambda / (pi NA)`` of a diffraction-limited focus."""
    return 2 * wavelength / (np.pi * numerical_aperture)


@dataclass(frozen=True)
class BeamModel:
    """Addressing beam. ``waist_radius`` defaults to the diffraction limit set by NA.

    ``tail_amplitude`` adds a slowly decaying ``w^2 / (r^2 + w^2)`` term to the
    intensity, standing in for aberration and aperture-clipping tails.
    """

    wavelength: float = QUBIT_WAVELENGTH
    numerical_aperture: float = 0.19
    waist_radius: float | None = None
    m_squared: float = 1.0
    resonant_rabi: float = hz(500e3)
    detuning: float = hz(5e6)
    tail_amplitude: float = 0.0

    def __post_init__(self):
        if self.m_squared < 1:
            raise ChainError("M^2 must be >= 1")
        if self.waist_radius is not None and self.waist_radius <= 0:
            raise ChainError("waist radius must be positive")
        if not 0 <= self.tail_amplitude < 1:
            raise ChainError("tail_amplitude must lie in [0, 1)")

    @property
    def effective_waist(self) -> float:
        w0 = self.waist_radius
        if w0 is None:
            w0 = diffraction_limited_waist_diameter(self.wavelength, self.numerical_aperture) / 2
        return w0 * self.m_squared


def light_shift(beam: BeamModel) -> float:
    """Off-resonant light shift ``Omega_res^2 / Delta`` (rad/s, signed like Delta)."""
    if beam.detuning == 0:
        raise ZeroDivisionError("light shift undefined at zero detuning")
    return beam.resonant_rabi**2 / beam.detuning


def beam_intensity(r, beam: BeamModel):
    """Relative intensity at distance ``r`` from the beam centre, 1 at r = 0."""
    w = beam.effective_waist
    r = np.asarray(r, dtype=float)
    gauss = np.exp(-2 * r**2 / w**2)
    out = (1 - beam.tail_amplitude) * gauss + beam.tail_amplitude * w**2 / (r**2 + w**2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CrosstalkReport:
    r_res: float
    r_ls: float
    epsilon_bound: float
    pair_ratios: dict = field(default_factory=dict)  # (addressed, neighbour) -> resonant ratio

    @classmethod
    def from_resonant_ratio(cls, r_res, pair_ratios=None):
        if not 0 <= r_res <= 1:
            raise ChainError(f"resonant crosstalk ratio must lie in [0, 1], got {r_res}")
        r_ls = r_res * r_res
        return cls(r_res, r_ls, 2 * r_ls * r_ls, dict(pair_ratios or {}))

    def to_record(self) -> dict:
        return {"r_res": self.r_res, "r_ls": self.r_ls, "epsilon_bound": self.epsilon_bound}


def crosstalk_map(positions, beam: BeamModel) -> CrosstalkReport:
    """Resonant Rabi-frequency ratios when addressing each ion in turn.

    The Rabi frequency follows the field amplitude, so each ratio is the square
    root of the relative intensity at the neighbour.
    """
    x = np.asarray(getattr(positions, "positions", positions), dtype=float)
    if len(x) < 2:
        raise ChainError("crosstalk needs at least two ions")
    pairs = {}
    for i in range(len(x)):
        for j in range(len(x)):
            if i != j:
                pairs[(i, j)] = math.sqrt(beam_intensity(abs(x[i] - x[j]), beam))
    return CrosstalkReport.from_resonant_ratio(max(pairs.values()), pairs)


@dataclass(frozen=True)
class AODSpec:
    spot_diameter: float = 1.1e-3
    acoustic_velocity: float = 650.0
    bandwidth: float = 45e6  # Hz
    xy_configuration: bool = False

    def __post_init__(self):
        if min(self.spot_diameter, self.acoustic_velocity, self.bandwidth) <= 0:
            raise ChainError("AOD parameters must be positive")


def aod_figures(aod: AODSpec):
    """Switching time ``d / v`` (s) and resolvable spot count ``tau * bandwidth``."""
    tau = aod.spot_diameter / aod.acoustic_velocity
    n = tau * aod.bandwidth
    if aod.xy_configuration:
        n *= math.sqrt(2)
    return tau, n
