"""
Heading through a minute of motor interference
==============================================

A platform sways and turns for 60 seconds while a motor near the
magnetometer adds a pulsing, noisy offset. The raw compass heading is off by
tens of degrees. The streaming estimator restores it sample by sample,
warm-starting each solve from the previous one.
"""

import math
from collections import Counter

import numpy as np

from magrestore.core import quat_to_euler, wrap_angle
from magrestore.estimator import EstimatorConfig, estimate_stream
from magrestore.sim import DisturbanceProfile, ScenarioConfig, generate

# %%
# Simulate at 400 Hz and keep only the rows carrying a fresh 50 Hz magnetometer sample.
scn = ScenarioConfig(mode="dynamic", duration=60.0, seed=1,
                     disturbance=DisturbanceProfile("motor_noise", (0.12, 0.08, 0.05), sigma=0.01))
samples, truth = generate(scn)
rows = [i for i, g in enumerate(truth) if g.mag_update]
samples = [samples[i] for i in rows]
truth = [truth[i] for i in rows]

# %%
# Run the estimator with field-direction bounds bracketing the known dip.
records = estimate_stream(samples, EstimatorConfig(dip=scn.dip))

true_yaw = np.array([quat_to_euler(g.q).yaw for g in truth])


def rms_deg(yaw):
    err = [wrap_angle(y - t) for y, t in zip(yaw, true_yaw)]
    return math.degrees(math.sqrt(np.mean(np.square(err))))


print(f"samples          {len(records)}")
print(f"estimation on    {sum(r.gated for r in records)}")
print(f"heading RMS      raw {rms_deg([r.yaw_before for r in records]):.2f} deg"
      f" -> restored {rms_deg([r.yaw_after for r in records]):.3f} deg")

# %%
# Warm starts keep most solves short.
hist = Counter(r.iters for r in records if r.gated)
print("iterations       " + " ".join(f"{k}:{v}" for k, v in sorted(hist.items())))

# %%
# Disturbance tracking error on the samples where estimation ran.
err = np.array([r.b_dyn - g.b_dyn for r, g in zip(records, truth) if r.gated])
print(f"b_dyn RMS error  {np.sqrt(np.mean(err ** 2)):.4f} Gauss")
