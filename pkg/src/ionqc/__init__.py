"""Simulation toolkit for a small trapped-ion quantum register.

Submodules: ``chain`` (geometry, modes, addressing optics), ``gates``
(multi-tone entangling gates and their analytic fidelity), ``oracle``
(truncated-Fock spin-boson integrator), ``register`` (four-level register
simulator), ``detection`` (camera readout), ``sequencer`` (feedback programs)
and ``cli``.
"""
from .chain import BeamModel, IonChain, TrapSpec, build_chain, crosstalk_map, hz, to_hz
from .gates import ModeSpec, Waveform, fidelity_2N, robust_waveform, robustness_scan, solve_robust_weights
from .register import EchoSchedule, NoiseModel, RegisterState

__version__ = "0.1.0"
