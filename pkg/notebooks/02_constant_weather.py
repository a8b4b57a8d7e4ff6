"""
Model against the ensemble at constant ambient temperature
==========================================================

Thermal noise sigma = 0.2 degC/sqrt(h), 30 degC outside, thermostat policy,
both started from the stationary distribution of the model.  Compare the
histograms every hour and the aggregate power over the day.
"""

# %%
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from tclagg import load_preset
from tclagg import experiments as ex

res = ex.run_simulation(load_preset("fig4"))
s = res.setup
N = s.grid.N
print(f"max hourly TV {res.metrics['max_tv']:.4f}, relative RMS power error {100 * res.metrics['rel_rms']:.2f}%")

# %% distributions at the last hour
k = s.steps
fig, ax = plt.subplots(1, 2, figsize=(10, 3.5), sharey=True)
for c, (name, lam) in enumerate((("off", s.grid.lambda_off), ("on", s.grid.lambda_on))):
    sl = slice(c * N, (c + 1) * N)
    ax[c].bar(lam, res.H[k, sl] / s.cfg.n_tcl, width=s.grid.delta_lambda, alpha=0.5, label="ensemble")
    ax[c].plot(lam, res.nu[k, sl], "k.-", label="model")
    ax[c].set_title(f"{name} chain, t = {k * s.dt:.0f} h")
    ax[c].set_xlabel("temperature [degC]")
ax[0].legend()
fig.tight_layout()
fig.savefig("constant_weather_hist.png", dpi=120)

# %% aggregate power
fig, ax = plt.subplots(figsize=(8, 3))
ax.plot(s.t, res.Y / 1e3, lw=0.8, label="ensemble")
ax.plot(s.t, res.gamma / 1e3, lw=1.5, label="model")
ax.set_xlabel("t [h]")
ax.set_ylabel("power [MW]")
ax.legend()
fig.tight_layout()
fig.savefig("constant_weather_power.png", dpi=120)
print(np.round(res.metrics["tv_hourly"], 4))
