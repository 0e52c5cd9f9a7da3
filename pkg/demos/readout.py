"""Calibrate the camera on a five-ion chain and stream a frame row by row."""
import numpy as np

from ionqc import chain as ch
from ionqc import detection as dt

w = ch.axial_freq_for_min_spacing(5, 2.83e-6)
chain = ch.build_chain(ch.TrapSpec(5, w))
print(f"axial frequency for 2.83 um spacing: {ch.to_hz(w) / 1e6:.4f} MHz")

det = dt.Detector.calibrated(chain.positions, seed=1)
t = det.table
print("thresholds:", np.round(t.thresholds).astype(int))
print("training error:", t.training_error)

rng = np.random.default_rng(3)
frame = dt.synthesize_frame("10110", chain.positions, det.camera, rng)
print(frame.image // 100)
bits, events = dt.classify_stream(frame.rows(), t, det.camera.row_readout_time)
for ion, bit, row, time in events:
    print(f"ion {ion}: {bit} decided after row {row} ({time * 1e6:.0f} us into readout)")

rep = dt.latency_budget(det.camera)
print(f"exposure {rep.exposure * 1e3:.2f} ms + readout {rep.readout * 1e6:.0f} us "
      f"+ decision {rep.decision * 1e6:.0f} us = {rep.total * 1e3:.3f} ms")
