"""Measure one ion while its partner sits in the hidden levels, then act on the result."""
import math

from ionqc import register as rg
from ionqc import sequencer as sq

prog = sq.experiment_2_program(math.pi / 2)
print(prog.to_json())

for label, machine in (("noiseless", sq.Machine.noiseless()),
                       ("no branching", sq.Machine.noiseless(branching=False)),
                       ("default noise", sq.default_machine())):
    r = sq.feedback_experiment(2, machine, seed=1, shots=1000, phis=[0.0, math.pi], scan_shots=50)
    print(f"{label:14s} success {r.success:.3f}")

print(f"dephasing-only estimate: {sq.predicted_feedback_success(rg.NoiseModel()):.3f}")
no_echo = sq.predicted_feedback_success(rg.NoiseModel(), rg.EchoSchedule(pulse_count=0))
print(f"same without echo pulses: {no_echo:.3f}")
