"""Shared generators and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np

from tclagg.assembly import assemble_rate_matrix, max_stable_dt
from tclagg.factorization import make_policy, off_switch_range, on_switch_range
from tclagg.grid import grid_for_deadband
from tclagg.physics import TclParams


def theta_range(p: TclParams):
    """Ambient range where the upwind stencil is valid on every interior face.

    Off drift is non-negative up to the face at ``lambda_max`` iff
    ``theta >= lambda_max``; on drift is non-positive down to the face at
    ``lambda_min`` iff ``theta <= lambda_min + eta P R``.
    """
    return p.lambda_max, p.lambda_min + p.eta * p.P_rated * p.R


def random_params(rng, sigma_max=0.6) -> TclParams:
    lmin = rng.uniform(15, 25)
    return TclParams(
        R=rng.uniform(1, 4), C=rng.uniform(1, 10), eta=rng.uniform(2, 4), P_rated=rng.uniform(2, 6),
        sigma=rng.uniform(0, sigma_max), lambda_min=lmin, lambda_max=lmin + rng.uniform(1, 3),
    )


def random_case(rng, N_max=60, sigma_max=0.6):
    """``(grid, params, theta_a)`` drawn from the drift-sign-valid region."""
    p = random_params(rng, sigma_max)
    K = int(rng.integers(2, 13))
    N = int(rng.integers(K + 3, max(K + 4, N_max + 1)))
    g = grid_for_deadband(N, p.lambda_min, p.lambda_max, K)
    lo, hi = theta_range(p)
    return g, p, float(rng.uniform(lo, hi))


def cfl_dt(g, p, theta) -> float:
    return max_stable_dt(assemble_rate_matrix(g, theta, p, 1e-9))


def random_policy(rng, g):
    return make_policy(g, rng.random(on_switch_range(g).size), rng.random(off_switch_range(g).size))


def p_direct(rate, dt, pol):
    """Transition matrix with the policy spliced into the rate structure.

    A TCL that flips in CV ``j`` jumps at rate ``alpha`` to the CV ``s`` of the
    other chain at the same temperature and then moves with that chain's
    rates, so row ``j`` of the policy generator is
    ``(1 - kappa) A_j + kappa (alpha (e_s - e_j) + A_s)``.  Built from ``A``
    alone, without the Phi/G blocks.
    """
    A = np.asarray(rate.A)
    g = rate.grid
    N = g.N
    n = 2 * N
    Apol = A.copy()
    for j in on_switch_range(g):
        kap = pol.phi_off_to_on[j]
        s = N + int(g.off_to_on_same_cv(j))
        jump = np.zeros(n)
        jump[s] += rate.alpha
        jump[j] -= rate.alpha
        Apol[j] = (1 - kap) * A[j] + kap * (jump + A[s])
    for i in off_switch_range(g):
        kap = pol.phi_on_to_off[i]
        s = int(g.on_to_off_same_cv(i))
        r = N + i
        jump = np.zeros(n)
        jump[s] += rate.alpha
        jump[r] -= rate.alpha
        Apol[r] = (1 - kap) * A[r] + kap * (jump + A[s])
    return np.eye(n) + dt * Apol
