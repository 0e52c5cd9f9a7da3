"""Compare a plain MS gate with the two-tone (1, 3) gate under gate-time errors."""
import math

import numpy as np

from ionqc import chain as ch
from ionqc import gates as gt
from ionqc import oracle as orc

chain = ch.build_chain(ch.TrapSpec(2, ch.hz(1.0025e6)))
mode = gt.ModeSpec(chain.mode_freqs[0], float(chain.lamb_dicke[0]), 0.0)
print(f"eta = {mode.lamb_dicke:.4f}")

ms = gt.robust_waveform(mode, (1,))
card = gt.robust_waveform(mode, (1, 3))
for name, wf in (("ms", ms), ("(1,3)", card)):
    p = gt.trajectory(wf, mode)
    print(f"{name:6s} rabi/2pi = {ch.to_hz(wf.rabi) / 1e3:7.2f} kHz  phase = {p.accumulated_phase:.6f}")

offsets = np.linspace(-0.05, 0.05, 11)
a = gt.robustness_scan(ms, mode, "gate_time", offsets).fidelities
b = gt.robustness_scan(card, mode, "gate_time", offsets).fidelities
print("\noffset   F_ms      F_(1,3)")
for o, x, y in zip(offsets, a, b):
    print(f"{o:+.3f}  {x:.6f}  {y:.6f}")

# the oracle agrees with the closed form at the edge of the scan
res = orc.evolve(card, mode, 2, orc.OracleConfig(time_grid=(0.0, card.duration * 1.05)))
print(f"\noracle at +5%: {orc.bell_fidelity(res):.6f}  formula: {b[-1]:.6f}")

ns = np.arange(2, 9)
inf = [1 - gt.robustness_scan(card, mode, "gate_time_setpoint", [0.01], N=int(n)).fidelities[0] for n in ns]
print(f"infidelity vs N slope at 1% set-point error: {gt.loglog_slope(ns, inf):.3f}")
