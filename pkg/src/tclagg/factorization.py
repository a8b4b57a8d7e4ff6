"""Policy/weather factorization of the transition matrix and the aggregate model.

With ``alpha = 1 / dt`` the Euler transition matrix splits as ``P = Phi @ G``:

* ``Phi`` (2N x 4N) holds the switching policy.  Row ``(i, u)`` sends the
  probability of keeping or flipping mode ``u`` in CV ``i`` to one of four
  column blocks ``[off->off, off->on, on->off, on->on]``.
* ``G`` (4N x 2N) moves temperature for one step given the new mode.  The
  keep-mode blocks are the chain transition matrices ``P_off``/``P_on``; the
  switch blocks ``S_on``/``S_off`` place a TCL that flips inside the deadband
  on the other chain's CV covering the same temperatures and then advance it
  with that chain's dynamics.  The thermostat rows (off CV N-1, on CV 0) are
  unit jumps to on CV q-1 / off CV m-1, which is what the assembled rows
  reduce to when ``alpha = 1 / dt``.

Only ``Phi`` changes when the balancing authority changes the policy; only
``G`` changes with the weather.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import RateMatrix, assemble_rate_matrix, transition_matrix
from .grid import CvGrid
from .physics import TclParams, nominal_power


class SimplexError(ValueError):
    pass


class AlphaMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SwitchPolicy:
    """Per-CV switching probabilities (0-based arrays of length N).

    ``phi_off_to_on[j]`` is the probability that an off TCL in off CV ``j``
    turns on; ``phi_on_to_off[i]`` that an on TCL in on CV ``i`` turns off.
    """

    phi_off_to_on: np.ndarray
    phi_on_to_off: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi_off_to_on", np.asarray(self.phi_off_to_on, dtype=float))
        object.__setattr__(self, "phi_on_to_off", np.asarray(self.phi_on_to_off, dtype=float))
        if self.phi_off_to_on.shape != self.phi_on_to_off.shape or self.phi_off_to_on.ndim != 1:
            raise ValueError("policy vectors must be 1-D and of equal length")

    @property
    def N(self) -> int:
        return self.phi_off_to_on.size

    def __eq__(self, other):
        return (
            isinstance(other, SwitchPolicy)
            and np.array_equal(self.phi_off_to_on, other.phi_off_to_on)
            and np.array_equal(self.phi_on_to_off, other.phi_on_to_off)
        )

    __hash__ = None


def on_switch_range(grid: CvGrid) -> np.ndarray:
    """0-based off CVs where a randomized turn-on is allowed (1-based m+1 .. N-1)."""
    return np.arange(grid.m_idx, grid.N - 1)


def off_switch_range(grid: CvGrid) -> np.ndarray:
    """0-based on CVs where a randomized turn-off is allowed (1-based 2 .. q-1)."""
    return np.arange(1, grid.q - 1)


def nominal_policy(grid: CvGrid) -> SwitchPolicy:
    """Deterministic thermostat: on from the top off CV, off from the bottom on CV."""
    on = np.zeros(grid.N)
    off = np.zeros(grid.N)
    on[-1] = 1.0
    off[0] = 1.0
    return SwitchPolicy(on, off)


def make_policy(grid: CvGrid, kappa_on=None, kappa_off=None) -> SwitchPolicy:
    """Policy with the mandatory thermostat entries and optional randomized parts.

    ``kappa_on`` covers ``on_switch_range(grid)`` and ``kappa_off`` covers
    ``off_switch_range(grid)``; scalars broadcast.
    """
    pol = nominal_policy(grid)
    on, off = pol.phi_off_to_on.copy(), pol.phi_on_to_off.copy()
    if kappa_on is not None:
        on[on_switch_range(grid)] = kappa_on
    if kappa_off is not None:
        off[off_switch_range(grid)] = kappa_off
    return SwitchPolicy(on, off)


@dataclass
class PolicyReport:
    passed: bool
    message: str = "ok"


def validate_policy(pol: SwitchPolicy, grid: CvGrid, tol: float = 0.0) -> PolicyReport:
    if pol.N != grid.N:
        return PolicyReport(False, f"policy length {pol.N} does not match grid N={grid.N}")
    for name, v in (("phi_off_to_on", pol.phi_off_to_on), ("phi_on_to_off", pol.phi_on_to_off)):
        bad = np.flatnonzero((v < -tol) | (v > 1 + tol) | ~np.isfinite(v))
        if bad.size:
            return PolicyReport(False, f"{name}[{bad[0] + 1}] = {v[bad[0]]!r} outside [0, 1]")
    if abs(pol.phi_off_to_on[-1] - 1.0) > tol:
        return PolicyReport(False, f"phi_off_to_on[{grid.N}] must be 1 (thermostat turn-on)")
    if abs(pol.phi_on_to_off[0] - 1.0) > tol:
        return PolicyReport(False, "phi_on_to_off[1] must be 1 (thermostat turn-off)")
    allowed = np.zeros(grid.N, dtype=bool)
    allowed[on_switch_range(grid)] = True
    allowed[-1] = True
    bad = np.flatnonzero(~allowed & (np.abs(pol.phi_off_to_on) > tol))
    if bad.size:
        return PolicyReport(
            False,
            f"phi_off_to_on[{bad[0] + 1}] = {pol.phi_off_to_on[bad[0]]!r} outside the permitted "
            f"range {grid.m_idx + 1}..{grid.N - 1}",
        )
    allowed[:] = False
    allowed[off_switch_range(grid)] = True
    allowed[0] = True
    bad = np.flatnonzero(~allowed & (np.abs(pol.phi_on_to_off) > tol))
    if bad.size:
        return PolicyReport(
            False,
            f"phi_on_to_off[{bad[0] + 1}] = {pol.phi_on_to_off[bad[0]]!r} outside the permitted "
            f"range 2..{grid.q - 1}",
        )
    return PolicyReport(True)


@dataclass(frozen=True)
class FactoredTransition:
    Phi: np.ndarray  # 2N x 4N
    G: np.ndarray  # 4N x 2N
    P: np.ndarray  # 2N x 2N

    @property
    def N(self) -> int:
        return self.P.shape[0] // 2


def policy_matrix(pol: SwitchPolicy) -> np.ndarray:
    N = pol.N
    Phi = np.zeros((2 * N, 4 * N))
    k = np.arange(N)
    Phi[k, k] = 1.0 - pol.phi_off_to_on
    Phi[k, N + k] = pol.phi_off_to_on
    Phi[N + k, 2 * N + k] = pol.phi_on_to_off
    Phi[N + k, 3 * N + k] = 1.0 - pol.phi_on_to_off
    return Phi


def weather_matrix(rate: RateMatrix, dt: float, check_alpha: bool = True) -> np.ndarray:
    """The 4N x 2N thermal factor ``G`` for one step of length ``dt``.

    Requires ``rate.alpha == 1 / dt``: the thermostat rows are the unit jumps
    ``e_q`` / ``e_m`` that the assembled rows reduce to only then.  Rows that
    no valid policy can reach (keep-off in the top off CV, keep-on in the
    bottom on CV, switches outside the deadband) are filled with
    row-stochastic placeholders so ``G`` itself stays stochastic.
    ``check_alpha=False`` skips the guard (negative controls only).
    """
    if check_alpha and not np.isclose(rate.alpha * dt, 1.0, rtol=0.0, atol=1e-12):
        raise AlphaMismatchError(
            f"factorization needs alpha = 1/dt; got alpha*dt = {rate.alpha * dt!r}"
        )
    grid = rate.grid
    N = grid.N
    P = transition_matrix(rate, dt) if check_alpha else np.eye(2 * N) + dt * rate.A
    P_off = P[:N, :N].copy()
    P_on = P[N:, N:].copy()

    G = np.zeros((4 * N, 2 * N))
    # keep mode
    G[:N, :N] = P_off
    G[3 * N :, N:] = P_on
    G[N - 1, :] = 0.0
    G[N - 1, N - 1] = 1.0
    G[3 * N, :] = 0.0
    G[3 * N, N] = 1.0

    # off -> on: same-temperature on CV, then on-chain step
    j = np.arange(N)
    src_on = np.clip(grid.off_to_on_same_cv(j), 1, N - 1)
    G[N + j, N:] = P_on[src_on]
    G[2 * N - 1, :] = 0.0
    G[2 * N - 1, N + grid.q - 1] = 1.0  # thermostat jump into on CV q

    # on -> off: same-temperature off CV, then off-chain step
    i = np.arange(N)
    src_off = np.clip(grid.on_to_off_same_cv(i), 0, N - 2)
    G[2 * N + i, :N] = P_off[src_off]
    G[2 * N, :] = 0.0
    G[2 * N, grid.m_idx - 1] = 1.0  # thermostat jump into off CV m
    return G


def build_factored(rate: RateMatrix, dt: float, pol: SwitchPolicy | None = None) -> FactoredTransition:
    """Return ``(Phi, G, Phi @ G)`` for ``pol`` (nominal when omitted)."""
    if pol is None:
        pol = nominal_policy(rate.grid)
    if pol.N != rate.N:
        raise ValueError("policy length does not match the grid")
    G = weather_matrix(rate, dt)
    Phi = policy_matrix(pol)
    return FactoredTransition(Phi=Phi, G=G, P=Phi @ G)


def _check_simplex(nu: np.ndarray, tol: float) -> None:
    s = nu.sum()
    if abs(s - 1.0) > tol or nu.min() < -tol:
        raise SimplexError(f"marginal left the simplex: sum={s!r}, min={nu.min()!r}")


def step_aggregate(nu, ft: FactoredTransition | np.ndarray, P_agg: float,
                   tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Advance the marginal one step; ``gamma`` is the power of the current marginal."""
    nu = np.asarray(nu, dtype=float)
    _check_simplex(nu, tol)
    P = ft.P if isinstance(ft, FactoredTransition) else np.asarray(ft)
    N = P.shape[0] // 2
    gamma = P_agg * nu[N:].sum()
    return nu @ P, float(gamma)


def nominal_ensemble_power(theta_a, p: TclParams, n_tcl: int):
    return n_tcl * nominal_power(theta_a, p)


def uniform_deadband_marginal(grid: CvGrid) -> np.ndarray:
    """All mass off, spread evenly over the off CVs inside the deadband."""
    nu = np.zeros(2 * grid.N)
    nu[grid.deadband_off] = 1.0 / grid.n_deadband
    return nu


def stationary_marginal(P: np.ndarray, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    """Invariant distribution of ``P`` from its left null space, refined by iteration."""
    n = P.shape[0]
    M = P.T - np.eye(n)
    M[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    nu = np.linalg.solve(M, b)
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    for _ in range(max_iter):
        nxt = nu @ P
        if np.abs(nxt - nu).sum() < tol:
            return nxt
        nu = nxt
    warnings.warn("stationary_marginal: iteration did not reach tolerance", RuntimeWarning)
    return nu


@dataclass
class AggregateTrajectory:
    nu: np.ndarray  # (K+1, 2N)
    gamma: np.ndarray  # (K+1,)


def run_aggregate(grid: CvGrid, p: TclParams, theta_a, dt: float, nu0, P_agg: float,
                  policies=None) -> AggregateTrajectory:
    """Iterate the aggregate model over ``len(theta_a)`` steps.

    ``policies`` is ``None`` (nominal), one ``SwitchPolicy``, or a sequence
    with one policy per step.
    """
    theta_a = np.asarray(theta_a, dtype=float)
    K = theta_a.size
    if policies is None or isinstance(policies, SwitchPolicy):
        policies = [policies or nominal_policy(grid)] * K
    if len(policies) < K:
        raise ValueError("need one policy per step")
    nu = np.empty((K + 1, 2 * grid.N))
    gamma = np.empty(K + 1)
    nu[0] = nu0
    G_cache: dict[float, np.ndarray] = {}
    for k in range(K):
        th = float(theta_a[k])
        G = G_cache.get(th)
        if G is None:
            G = weather_matrix(assemble_rate_matrix(grid, th, p, 1.0 / dt), dt)
            G_cache[th] = G
        P = policy_matrix(policies[k]) @ G
        nu[k + 1], gamma[k] = step_aggregate(nu[k], P, P_agg)
    gamma[K] = P_agg * nu[K, grid.N :].sum()
    return AggregateTrajectory(nu=nu, gamma=gamma)


# -- policy files -----------------------------------------------------------

_CHAINS = {"off": "phi_off_to_on", "on": "phi_on_to_off"}


def _policy_rows(pol: SwitchPolicy):
    for chain, attr in _CHAINS.items():
        for j, v in enumerate(getattr(pol, attr), start=1):
            yield chain, j, float(v)


def write_policy(path, pol: SwitchPolicy) -> None:
    """Text table ``chain j kappa``: ``off`` rows are turn-on probabilities of off CVs."""
    with open(Path(path), "w") as fh:
        fh.write("chain j kappa\n")
        for chain, j, v in _policy_rows(pol):
            fh.write(f"{chain} {j} {v!r}\n")


def _parse_policies(lines, with_step: bool):
    tables: dict[int, dict[str, dict[int, float]]] = {}
    for n, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if with_step:
                k, chain, j, v = int(parts[0]), parts[1], int(parts[2]), float(parts[3])
            else:
                k, (chain, j, v) = 0, (parts[0], int(parts[1]), float(parts[2]))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {n}: cannot parse {line!r}") from exc
        if chain not in _CHAINS:
            raise ValueError(f"line {n}: unknown chain {chain!r}")
        tables.setdefault(k, {"off": {}, "on": {}})[chain][j] = v
    out = []
    for k in sorted(tables):
        t = tables[k]
        N = max(len(t["off"]), len(t["on"]))
        vecs = []
        for chain in ("off", "on"):
            if sorted(t[chain]) != list(range(1, N + 1)):
                raise ValueError(f"step {k}: chain {chain!r} must list j = 1..{N}")
            vecs.append([t[chain][j] for j in range(1, N + 1)])
        out.append(SwitchPolicy(*vecs))
    return out


def read_policy(path) -> SwitchPolicy:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["chain", "j", "kappa"]:
        raise ValueError(f"{path}: expected header 'chain j kappa'")
    return _parse_policies(lines[1:], with_step=False)[0]


def write_policy_schedule(path, policies) -> None:
    with open(Path(path), "w") as fh:
        fh.write("k chain j kappa\n")
        for k, pol in enumerate(policies):
            for chain, j, v in _policy_rows(pol):
                fh.write(f"{k} {chain} {j} {v!r}\n")


def read_policy_schedule(path) -> list[SwitchPolicy]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["k", "chain", "j", "kappa"]:
        raise ValueError(f"{path}: expected header 'k chain j kappa'")
    return _parse_policies(lines[1:], with_step=True)
