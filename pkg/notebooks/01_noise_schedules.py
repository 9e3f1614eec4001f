"""
Noise schedules and signal decay
================================

Builds all eight schedules with the same endpoints and compares how quickly
they destroy the signal.
"""

import numpy as np

from lidardiff.schedule import KINDS, make_schedule, snr, snr_crossing_step

# every kind shares T=1000 and beta in [1e-4, 0.02]
schedules = {kind: make_schedule(kind) for kind in KINDS}

# %%
# Step at which the signal-to-noise ratio first drops below 0.1, and the
# signal fraction left at the final step.
print(f"{'kind':>15} {'snr<0.1 at':>11} {'alpha_bar_T':>12}")
for kind, s in schedules.items():
    print(f"{kind:>15} {snr_crossing_step(snr(s), 0.1):>11d} {s.alpha_bars[-1]:>12.3e}")

# %%
# The ramp schedule holds beta flat for ``n`` steps and then walks the
# linear base trajectory, so it looks like a staircase of small ramps.
ramp = schedules["ramp"]
print("first 25 ramp betas:", np.round(ramp.betas[:25] * 1e4, 2), "(x 1e-4)")

# %%
# Tables for plotting elsewhere.
ramp.write_csv("ramp_schedule.csv")
