"""
Monotone versus unconstrained policies
======================================

The tracking QP can force switch-on probabilities to grow with temperature
(and switch-off probabilities to shrink), which keeps designed policies
close to a thermostat.  Solve the same short problem with and without that
constraint and compare tracking cost and policy shape.
"""

# %%
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from tclagg import TrackingProblem, design_policies, load_preset, nominal_policy, policy_matrix, stationary_marginal
from tclagg import experiments as ex

cfg = load_preset("fig6")
cfg.horizon_hours, cfg.steps = 6.0, 70  # first six hours, same step as the full day
s = ex.setup(cfg)
G = s.G_seq()
r, nominal = ex.reference_series(s)
nu0 = stationary_marginal(policy_matrix(nominal_policy(s.grid)) @ G[0])
prob = TrackingProblem(s.grid, nu0, r, G, s.P_agg)

out = {mono: design_policies(prob, monotone=mono) for mono in (True, False)}
for mono, d in out.items():
    rms = np.sqrt(np.mean((d.gamma - r) ** 2))
    print(f"monotone={mono!s:5}  status {d.report.status:8}  objective {d.report.objective:.3e} kW^2  RMS {rms:.0f} kW")

# %% the on-switch probabilities at the step with the largest demand swing
k = int(np.argmax(np.abs(np.diff(r))))
fig, ax = plt.subplots(figsize=(7, 3))
for mono, d in out.items():
    ax.step(np.arange(s.grid.N), d.policies[k].phi_off_to_on, where="mid", label=f"monotone={mono}")
ax.set_xlabel("off CV index")
ax.set_ylabel("P(switch on)")
ax.set_title(f"step {k}")
ax.legend()
fig.tight_layout()
fig.savefig("monotone_vs_free.png", dpi=120)
