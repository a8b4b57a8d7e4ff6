"""
Model against the ensemble over a summer day
============================================

Same population as the constant-weather run, now driven by a measured
summer temperature profile.  The weather matrix changes every step while
the thermostat policy stays fixed.
"""

# %%
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from tclagg import load_preset
from tclagg import experiments as ex

res = ex.run_simulation(load_preset("fig5"))
s = res.setup
print(f"max hourly TV {res.metrics['max_tv']:.4f}, relative RMS power error {100 * res.metrics['rel_rms']:.2f}%")

# %%
fig, ax = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
ax[0].plot(s.t, s.theta, "C3")
ax[0].set_ylabel("ambient [degC]")
ax[1].plot(s.t, res.Y / 1e3, lw=0.8, label="ensemble")
ax[1].plot(s.t, res.gamma / 1e3, lw=1.5, label="model")
ax[1].set_xlabel("t [h]")
ax[1].set_ylabel("power [MW]")
ax[1].legend()
fig.tight_layout()
fig.savefig("summer_day.png", dpi=120)
