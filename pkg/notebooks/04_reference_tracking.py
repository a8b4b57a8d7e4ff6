"""
Tracking a power reference with designed switching policies
===========================================================

The reference is the nominal summer-day consumption plus two sinusoids
(10 MW over 6 h, 6 MW over 2.5 h).  One QP over the whole day gives the
per-step policies, which are then applied open loop to 50,000 TCLs.
"""

# %%
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from tclagg import load_preset
from tclagg import experiments as ex

res = ex.run_tracking(load_preset("fig6"))
s, m = res.setup, res.metrics
rep = res.reports[0]
print(f"QP: {rep.n_variables} variables, {rep.n_constraints} constraints, {rep.solve_time:.1f} s, {rep.status}")
print(f"tracking RMS {m['rms_tracking_error']:.0f} kW ({m['tracking_ratio']:.3f} of the reference gap)")
print(f"prediction RMS {m['rms_prediction_error']:.0f} kW, binomial bound {m['binomial_bound']:.0f} kW")

# %%
fig, ax = plt.subplots(figsize=(9, 4))
ax.plot(s.t, res.nominal / 1e3, "k:", label="nominal")
ax.plot(s.t, res.r / 1e3, "k", lw=1.5, label="reference")
ax.plot(s.t, res.gamma_pred / 1e3, "C1", label="model prediction")
ax.plot(s.t, res.Y / 1e3, "C0", lw=0.8, label="ensemble")
ax.set_xlabel("t [h]")
ax.set_ylabel("power [MW]")
ax.legend()
fig.tight_layout()
fig.savefig("reference_tracking.png", dpi=120)

# %% how hard the policies work: mean switching probability per step
import numpy as np

on = [p.phi_off_to_on.mean() for p in res.policies]
off = [p.phi_on_to_off.mean() for p in res.policies]
fig, ax = plt.subplots(figsize=(9, 2.5))
ax.plot(s.t[:-1], on, label="off -> on")
ax.plot(s.t[:-1], off, label="on -> off")
ax.set_xlabel("t [h]")
ax.set_ylabel("mean probability")
ax.legend()
fig.tight_layout()
fig.savefig("reference_tracking_policies.png", dpi=120)
print(f"largest switching probability {max(np.max(on), np.max(off)):.3f}")
