"""Policy design by convex quadratic programming.

Tracking the reference with the aggregate model is bilinear in the marginal
``nu_k`` and the policy ``Phi_k``.  Working with the joint masses
``J_k = diag(nu_k) Phi_k`` makes it linear: only the four diagonals of the
non-zero blocks of ``J_k`` are needed, so each step carries ``6N`` variables

    z_k = [nu_{k+1}, B_on_off, B_off_on, B_on_on, B_off_off]

where e.g. ``B_off_on[j]`` is the mass that is off in CV ``j`` at step ``k``
and turns on.  The dynamics become ``nu_{k+1} = [B_off_off, B_off_on,
B_on_off, B_on_on] @ G_k`` and the policy is read back as
``B_off_on / nu_off`` (zero where ``nu_off`` is zero).
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .factorization import (
    SwitchPolicy,
    nominal_policy,
    off_switch_range,
    on_switch_range,
    policy_matrix,
    step_aggregate,
    validate_policy,
)
from .grid import CvGrid

log = logging.getLogger(__name__)


@dataclass
class TrackingProblem:
    grid: CvGrid
    nu_hat: np.ndarray  # (2N,)
    r: np.ndarray  # (T+1,) kW, aligned with gamma_0 .. gamma_T
    G_seq: list  # T matrices of shape (4N, 2N)
    P_agg: float

    def __post_init__(self):
        self.nu_hat = np.asarray(self.nu_hat, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        N = self.grid.N
        if self.nu_hat.shape != (2 * N,):
            raise ValueError("nu_hat must have length 2N")
        if abs(self.nu_hat.sum() - 1.0) > 1e-9 or self.nu_hat.min() < -1e-12:
            raise ValueError("nu_hat must lie on the probability simplex")
        if self.r.size != self.T + 1:
            raise ValueError(f"reference needs T+1 = {self.T + 1} samples, got {self.r.size}")
        for G in self.G_seq:
            if np.shape(G) != (4 * N, 2 * N):
                raise ValueError("each G_k must be 4N x 2N")

    @property
    def T(self) -> int:
        return len(self.G_seq)


@dataclass(frozen=True)
class Layout:
    """Offsets of the per-step blocks in the stacked variable vector."""

    N: int
    T: int

    @property
    def per_step(self) -> int:
        return 6 * self.N

    @property
    def n_variables(self) -> int:
        return self.per_step * self.T

    def nu_next(self, k):
        b = k * self.per_step
        return np.arange(b, b + 2 * self.N)

    def block(self, k, name):
        off = {"on_off": 2, "off_on": 3, "on_on": 4, "off_off": 5}[name]
        b = k * self.per_step + off * self.N
        return np.arange(b, b + self.N)


@dataclass
class TrackingQP:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    n_eq: int
    n_ineq: int
    layout: Layout
    groups: list = field(default_factory=list)  # (name, row slice)
    const: float = 0.0

    @property
    def n_variables(self) -> int:
        return self.layout.n_variables


class _Rows:
    """Accumulates sparse constraint rows ``A x (= or <=) b``."""

    def __init__(self):
        self.r, self.c, self.v, self.b = [], [], [], []
        self.n = 0
        self.groups = []

    def add(self, cols_vals, rhs, group):
        start = self.n
        for cols, vals in cols_vals:
            cols = np.atleast_2d(cols)
            vals = np.broadcast_to(vals, cols.shape)
            rows = start + np.arange(cols.shape[0])[:, None]
            self.r.append(np.broadcast_to(rows, cols.shape).ravel())
            self.c.append(cols.ravel())
            self.v.append(np.asarray(vals, dtype=float).ravel())
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self.b.append(rhs)
        self.n += rhs.size
        self.groups.append((group, slice(start, self.n)))

    def matrix(self, n_cols):
        if not self.r:
            return sp.csc_matrix((0, n_cols)), np.zeros(0)
        A = sp.coo_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=(self.n, n_cols),
        ).tocsc()
        return A, np.concatenate(self.b)


def build_tracking_qp(prob: TrackingProblem, monotone: bool = True) -> TrackingQP:
    """Assemble the convex QP in the stacked ``z_k`` variables."""
    grid = prob.grid
    N, T = grid.N, prob.T
    L = Layout(N, T)
    n = L.n_variables
    nu_hat = prob.nu_hat
    on_ok = np.zeros(N, dtype=bool)
    on_ok[on_switch_range(grid)] = True
    off_ok = np.zeros(N, dtype=bool)
    off_ok[off_switch_range(grid)] = True

    eq, ineq = _Rows(), _Rows()
    col = np.arange(N)
    for k in range(T):
        nxt = L.nu_next(k)
        blocks = [L.block(k, s) for s in ("off_off", "off_on", "on_off", "on_on")]
        # dynamics: nu_{k+1} - G_k^T b_k = 0
        Gt = sp.coo_matrix(np.asarray(prob.G_seq[k]).T)
        bcols = np.concatenate(blocks)
        eq.add([(nxt[:, None], 1.0)], np.zeros(2 * N), "dynamics")
        dyn = eq.groups[-1][1]
        eq.r.append(dyn.start + Gt.row)
        eq.c.append(bcols[Gt.col])
        eq.v.append(-Gt.data)

        # marginal consistency: B_x,x + B_x,y = nu_k
        for chain, (keep, flip) in enumerate((("off_off", "off_on"), ("on_on", "on_off"))):
            terms = [(L.block(k, keep)[:, None], 1.0), (L.block(k, flip)[:, None], 1.0)]
            if k == 0:
                rhs = nu_hat[chain * N : (chain + 1) * N]
            else:
                prev = L.nu_next(k - 1)[chain * N : (chain + 1) * N]
                terms.append((prev[:, None], -1.0))
                rhs = np.zeros(N)
            eq.add(terms, rhs, "marginal")

        # support zeros and thermostat switches
        for name, ok, forced, chain in (("off_on", on_ok, N - 1, 0), ("on_off", off_ok, 0, 1)):
            blk = L.block(k, name)
            zero = np.flatnonzero(~ok & (col != forced))
            eq.add([(blk[zero][:, None], 1.0)], np.zeros(zero.size), "support")
            if k == 0:
                eq.add([(blk[[forced]][:, None], 1.0)], [nu_hat[chain * N + forced]], "thermostat")
            else:
                prev = L.nu_next(k - 1)[chain * N + forced]
                eq.add([(np.array([[blk[forced], prev]]), np.array([[1.0, -1.0]]))], [0.0], "thermostat")

        if monotone:
            # B_off_on non-decreasing with temperature over the turn-on range
            j = on_switch_range(grid)
            if j.size > 1:
                b = L.block(k, "off_on")
                pairs = np.stack([b[j[:-1]], b[j[1:]]], axis=1)
                ineq.add([(pairs, np.array([1.0, -1.0]))], np.zeros(j.size - 1), "monotone_on")
            i = off_switch_range(grid)
            if i.size > 1:
                b = L.block(k, "on_off")
                pairs = np.stack([b[i[1:]], b[i[:-1]]], axis=1)
                ineq.add([(pairs, np.array([1.0, -1.0]))], np.zeros(i.size - 1), "monotone_off")

    allv = np.arange(n)[:, None]
    ineq.add([(allv, -1.0)], np.zeros(n), "lower_bound")
    ineq.add([(allv, 1.0)], np.ones(n), "upper_bound")

    A_eq, b_eq = eq.matrix(n)
    A_in, b_in = ineq.matrix(n)
    A = sp.vstack([A_eq, A_in]).tocsc()
    b = np.concatenate([b_eq, b_in])
    groups = eq.groups + [(g, slice(s.start + eq.n, s.stop + eq.n)) for g, s in ineq.groups]

    # objective in power fractions: sum_k (r_k / P_agg - 1^T nu_on[k])^2, k = 1..T
    rf = prob.r / prob.P_agg
    on_idx = np.concatenate([L.nu_next(k)[N:] for k in range(T)])
    blk = sp.block_diag([2.0 * np.ones((N, N))] * T, format="coo")
    P = sp.coo_matrix((blk.data, (on_idx[blk.row], on_idx[blk.col])), shape=(n, n))
    P = sp.triu(P, format="csc")
    q = np.zeros(n)
    q[on_idx] = -2.0 * np.repeat(rf[1:], N)
    const = float(np.sum(rf[1:] ** 2) + (rf[0] - nu_hat[N:].sum()) ** 2)
    return TrackingQP(P=P, q=q, A=A, b=b, n_eq=eq.n, n_ineq=ineq.n, layout=L, groups=groups, const=const)


@dataclass
class SolveReport:
    status: str
    objective: float  # sum of squared tracking errors in kW^2
    max_primal_infeasibility: float
    iterations: int
    solve_time: float
    n_variables: int
    n_constraints: int
    converged: bool
    monotone: bool
    violated_groups: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class DesignResult:
    policies: list
    nu: np.ndarray  # (T+1, 2N) predicted marginals
    gamma: np.ndarray  # (T+1,) predicted power, kW
    report: SolveReport
    z: np.ndarray | None = None


def _infeasibility(qp: TrackingQP, x: np.ndarray) -> float:
    res = qp.A @ x - qp.b
    eq = np.abs(res[: qp.n_eq]).max(initial=0.0)
    ineq = np.clip(res[qp.n_eq :], 0.0, None).max(initial=0.0)
    return float(max(eq, ineq))


def design_policies(prob: TrackingProblem, monotone: bool = True, tol_feas: float = 1e-8,
                    tol_gap: float = 1e-8, max_iter: int = 100_000, verbose: bool = False) -> DesignResult:
    """Solve the tracking QP and recover one policy per step."""
    qp = build_tracking_qp(prob, monotone=monotone)
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_feas = tol_feas
    settings.tol_gap_abs = tol_gap
    settings.tol_gap_rel = tol_gap
    # single-threaded sparse LDL: deterministic, and faster than the
    # supernodal backend on these banded problems
    settings.direct_solve_method = "qdldl"
    cones = [clarabel.ZeroConeT(qp.n_eq), clarabel.NonnegativeConeT(qp.n_ineq)]
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(qp.P, qp.q, qp.A, qp.b, cones, settings)
    sol = solver.solve()
    elapsed = time.perf_counter() - t0
    status = str(sol.status)
    x = np.asarray(sol.x)
    solved = status.endswith("Solved") and "Almost" not in status
    violated = []
    if "Infeasible" in status:
        # interior-point certificates are dense; keep the groups carrying a
        # sizeable share of the largest dual weight, heaviest first
        z = np.abs(np.asarray(sol.z))
        weight: dict[str, float] = {}
        for g, s in qp.groups:
            weight[g] = max(weight.get(g, 0.0), float(z[s].max(initial=0.0)))
        top = max(weight.values(), default=0.0)
        violated = sorted((g for g, w in weight.items() if top > 0 and w >= 0.1 * top), key=lambda g: -weight[g])
    infeas = _infeasibility(qp, x) if x.size == qp.n_variables else float("inf")
    obj = float("nan")
    if x.size == qp.n_variables and np.all(np.isfinite(x)):
        # evaluated directly: the stored P is only the upper triangle
        on = np.concatenate([qp.layout.nu_next(k)[prob.grid.N :] for k in range(prob.T)])
        sums = x[on].reshape(prob.T, prob.grid.N).sum(axis=1)
        rf = prob.r / prob.P_agg
        obj = float(np.sum((rf[1:] - sums) ** 2) + (rf[0] - prob.nu_hat[prob.grid.N :].sum()) ** 2) * prob.P_agg**2
    report = SolveReport(
        status=status, objective=obj, max_primal_infeasibility=infeas, iterations=int(sol.iterations),
        solve_time=elapsed, n_variables=qp.n_variables, n_constraints=qp.n_eq + qp.n_ineq,
        converged=solved and infeas <= 1e-6, monotone=monotone, violated_groups=violated,
    )
    if not report.converged:
        warnings.warn(f"tracking QP not converged: {status}, infeasibility {infeas:.2e}", RuntimeWarning)
    log.info("tracking QP: %s in %d iterations (%.1fs), objective %.6g", status, report.iterations, elapsed, obj)

    nu, policies = unpack_solution(prob, x)
    gamma = prob.P_agg * nu[:, prob.grid.N :].sum(axis=1)
    return DesignResult(policies=policies, nu=nu, gamma=gamma, report=report, z=x)


def unpack_solution(prob: TrackingProblem, x: np.ndarray):
    grid = prob.grid
    N, T = grid.N, prob.T
    L = Layout(N, T)
    nu = np.empty((T + 1, 2 * N))
    nu[0] = prob.nu_hat
    policies = []
    for k in range(T):
        nu[k + 1] = x[L.nu_next(k)]
        policies.append(
            recover_policies(
                {name: x[L.block(k, name)] for name in ("on_off", "off_on", "on_on", "off_off")},
                nu[k],
                grid,
            )
        )
    return nu, policies


def recover_policies(blocks: dict, nu_k, grid: CvGrid, tol: float = 1e-6) -> SwitchPolicy:
    """Turn-on/off probabilities ``B / nu`` with the pseudo-inverse rule (``0`` where ``nu == 0``)."""
    N = grid.N
    nu_k = np.asarray(nu_k, dtype=float)
    out = []
    clamped = 0
    for name, marg in (("off_on", nu_k[:N]), ("on_off", nu_k[N:])):
        B = np.asarray(blocks[name], dtype=float)
        # pseudo-inverse rule; dividing directly keeps subnormal masses finite
        phi = np.divide(B, marg, out=np.zeros(N), where=marg != 0)
        over = (phi < -tol) | (phi > 1 + tol)
        clamped += int(np.count_nonzero(over & (np.abs(marg) > 1e-9)))
        out.append(np.clip(phi, 0.0, 1.0))
    phi_on, phi_off = out
    keep = np.zeros(N, dtype=bool)
    keep[on_switch_range(grid)] = True
    phi_on[~keep] = 0.0
    phi_on[-1] = 1.0
    keep[:] = False
    keep[off_switch_range(grid)] = True
    phi_off[~keep] = 0.0
    phi_off[0] = 1.0
    if clamped:
        warnings.warn(f"recover_policies: clamped {clamped} ratios outside [0, 1]", RuntimeWarning)
    pol = SwitchPolicy(phi_on, phi_off)
    assert validate_policy(pol, grid).passed
    return pol


def joint_blocks(pol: SwitchPolicy, nu_k) -> dict:
    """Inverse of ``recover_policies``: the diagonals of ``diag(nu_k) Phi``."""
    N = pol.N
    nu_k = np.asarray(nu_k, dtype=float)
    off, on = nu_k[:N], nu_k[N:]
    return {
        "off_off": off * (1 - pol.phi_off_to_on),
        "off_on": off * pol.phi_off_to_on,
        "on_off": on * pol.phi_on_to_off,
        "on_on": on * (1 - pol.phi_on_to_off),
    }


def make_reference(nominal, amplitudes, periods, dt: float, t0: float = 0.0, phases=None) -> np.ndarray:
    """``nominal + sum_i a_i sin(2 pi t / T_i + phase_i)`` sampled at ``t_k = t0 + k dt``."""
    nominal = np.asarray(nominal, dtype=float)
    t = t0 + dt * np.arange(nominal.size)
    phases = np.zeros(len(amplitudes)) if phases is None else np.asarray(phases, dtype=float)
    r = nominal.copy()
    for a, T_i, ph in zip(amplitudes, periods, phases):
        r += a * np.sin(2 * np.pi * t / T_i + ph)
    return r


def predict(prob: TrackingProblem, policies) -> tuple[np.ndarray, np.ndarray]:
    """Roll the aggregate model forward under ``policies``."""
    N = prob.grid.N
    nu = np.empty((prob.T + 1, 2 * N))
    gamma = np.empty(prob.T + 1)
    nu[0] = prob.nu_hat
    for k in range(prob.T):
        P = policy_matrix(policies[k]) @ prob.G_seq[k]
        nu[k + 1], gamma[k] = step_aggregate(nu[k], P, prob.P_agg, tol=1e-6)
    gamma[-1] = prob.P_agg * nu[-1, N:].sum()
    return nu, gamma


def nominal_schedule(grid: CvGrid, T: int) -> list:
    return [nominal_policy(grid)] * T


@dataclass
class RecedingHorizonResult:
    policies: list  # applied policy per step
    reports: list  # one SolveReport per re-solve
    solve_steps: list  # steps at which the problem was re-solved
    gamma_pred: np.ndarray  # power predicted by the solve that chose each step's policy


def receding_horizon(grid: CvGrid, G_seq, r, P_agg: float, nu_hat, measure, window: int | None = None,
                     resolve_every: int = 1, monotone: bool = True, apply=None) -> RecedingHorizonResult:
    """Re-solve the tracking QP from measured marginals (MPC style).

    Parameters
    ----------
    measure : callable
        ``measure(k) -> nu`` returns the measured marginal at step ``k``
        (e.g. a normalized ensemble histogram).  Called at every re-solve
        step after the first, which uses ``nu_hat``.
    window : int, optional
        Prediction horizon in steps; defaults to the remaining steps.
    resolve_every : int
        Number of designed policies applied before the next re-solve.
    apply : callable, optional
        ``apply(k, policy)`` is called as each policy is committed, so the
        caller can advance a plant in lockstep.
    """
    if resolve_every < 1:
        raise ValueError("resolve_every must be at least 1")
    r = np.asarray(r, dtype=float)
    T = len(G_seq)
    applied, reports, solves = [], [], []
    gamma_pred = np.zeros(T + 1)
    k = 0
    nu = np.asarray(nu_hat, dtype=float)
    while k < T:
        if k > 0:
            nu = np.asarray(measure(k), dtype=float)
        w = T - k if window is None else min(window, T - k)
        prob = TrackingProblem(grid, nu, r[k : k + w + 1], list(G_seq[k : k + w]), P_agg)
        res = design_policies(prob, monotone=monotone)
        reports.append(res.report)
        solves.append(k)
        n_apply = min(resolve_every, w)
        gamma_pred[k : k + n_apply + 1] = res.gamma[: n_apply + 1]
        for pol in res.policies[:n_apply]:
            if apply is not None:
                apply(k, pol)
            applied.append(pol)
            k += 1
    return RecedingHorizonResult(policies=applied, reports=reports, solve_steps=solves, gamma_pred=gamma_pred)
