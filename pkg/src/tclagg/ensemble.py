"""Monte-Carlo simulation of a TCL population under randomized switching policies.

Each step a TCL (i) bins its temperature, (ii) draws its next mode from the
policy, wrapped inside the thermostat law, and (iii) advances its temperature
one Euler-Maruyama step in the new mode.  The recorded pair ``(x_k, m_k)`` is
therefore the temperature together with the mode it was driven by, which is
the quantity the aggregate marginal ``nu_k`` describes.

Random streams: TCL ``l`` belongs to block ``l // BLOCK_SIZE``; block ``b``
draws from ``PCG64(SeedSequence(seed).spawn(n_blocks + 1)[b + 1])`` and the
extra child ``[0]`` seeds the initial condition and parameter jitter.  Each
step every block draws its normals and then its uniforms.  Results are thus
independent of how blocks are spread over threads.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .factorization import SwitchPolicy, nominal_policy
from .grid import CvGrid
from .physics import OFF, ON, TclParams, thermostat_next_mode

log = logging.getLogger(__name__)

BLOCK_SIZE = 8192


def apply_randomized_policy(I, m, pol: SwitchPolicy, draw, x=None, p: TclParams | None = None):
    """Next mode from bin ``I`` (0-based), current mode ``m`` and a uniform draw.

    An off TCL turns on iff ``draw < pol.phi_off_to_on[I]``; an on TCL turns off
    iff ``draw < pol.phi_on_to_off[I]``.  When the temperature ``x`` and
    parameters ``p`` are given, the thermostat law then overrides the result.
    """
    I = np.asarray(I)
    m = np.asarray(m)
    draw = np.asarray(draw)
    flip = np.where(m == OFF, draw < pol.phi_off_to_on[I], draw < pol.phi_on_to_off[I])
    nxt = np.where(flip, 1 - m, m)
    if x is not None:
        if p is None:
            raise ValueError("thermostat override needs the TCL parameters")
        x = np.asarray(x)
        nxt = np.where(x >= p.lambda_max, ON, np.where(x <= p.lambda_min, OFF, nxt))
    return nxt if nxt.ndim else int(nxt)


@dataclass
class EnsembleConfig:
    n_tcl: int
    seed: int
    dt: float
    horizon: int
    params: TclParams
    theta_a_series: np.ndarray
    jitter: float = 0.0  # relative spread of R and C (uniform +/- jitter)
    init: str = "deadband"  # "deadband" | "interval" | "marginal"
    init_mode: int = OFF
    init_interval: tuple[float, float] | None = None
    init_marginal: np.ndarray | None = None
    record_switches: bool = False

    def __post_init__(self):
        self.theta_a_series = np.asarray(self.theta_a_series, dtype=float)
        if self.n_tcl < 1:
            raise ValueError("n_tcl must be at least 1")
        if self.dt <= 0 or self.horizon < 0:
            raise ValueError("dt must be positive and horizon non-negative")
        if self.theta_a_series.size < self.horizon:
            raise ValueError("theta_a_series shorter than the horizon")


@dataclass
class EnsembleTrace:
    Y: np.ndarray  # kW, (horizon+1,)
    H: np.ndarray  # counts, (horizon+1, 2N)
    switch_counts: np.ndarray  # per TCL
    escapes: int  # TCL-steps binned outside their chain span
    x_final: np.ndarray
    m_final: np.ndarray
    switch_events: list = field(default_factory=list)  # (k, tcl indices, new modes)

    @property
    def n_tcl(self) -> int:
        return int(self.H[0].sum())


def _initial_state(cfg: EnsembleConfig, grid: CvGrid, rng: np.random.Generator):
    n = cfg.n_tcl
    if cfg.init == "deadband":
        x = rng.uniform(grid.lambda_min, grid.lambda_max, n)
        m = np.full(n, cfg.init_mode, dtype=np.int8)
    elif cfg.init == "interval":
        lo, hi = cfg.init_interval
        x = rng.uniform(lo, hi, n)
        m = np.full(n, cfg.init_mode, dtype=np.int8)
    elif cfg.init == "marginal":
        nu = np.clip(np.asarray(cfg.init_marginal, dtype=float), 0.0, None)
        state = rng.choice(nu.size, size=n, p=nu / nu.sum())
        m = (state >= grid.N).astype(np.int8)
        k = state % grid.N
        lo = np.where(m == ON, grid.edges_on[k], grid.edges_off[k])
        x = lo + grid.delta_lambda * (1.0 - rng.random(n))  # (lower, upper]
    else:
        raise ValueError(f"unknown init {cfg.init!r}")
    return x, m


def histogram(x, m, grid: CvGrid) -> tuple[np.ndarray, int]:
    """Counts over ``(chain, CV)`` in the aggregate state ordering, plus escapes."""
    k, esc = grid.bin_clipped(x, m)
    H = np.bincount(k + grid.N * m.astype(np.int64), minlength=2 * grid.N)
    return H, int(esc.sum())


class EnsembleRunner:
    """Steppable ensemble; ``simulate_ensemble`` drives one of these."""

    def __init__(self, cfg: EnsembleConfig, grid: CvGrid, threads: int = 1):
        self.cfg, self.grid = cfg, grid
        p = cfg.params
        n = cfg.n_tcl
        n_blocks = -(-n // BLOCK_SIZE)
        children = np.random.SeedSequence(cfg.seed).spawn(n_blocks + 1)
        init_rng = np.random.Generator(np.random.PCG64(children[0]))
        self._rngs = [np.random.Generator(np.random.PCG64(c)) for c in children[1:]]
        self._bounds = [(b * BLOCK_SIZE, min(n, (b + 1) * BLOCK_SIZE)) for b in range(n_blocks)]
        self.x, self.m = _initial_state(cfg, grid, init_rng)
        if cfg.jitter > 0:
            R = p.R * (1 + cfg.jitter * init_rng.uniform(-1, 1, n))
            C = p.C * (1 + cfg.jitter * init_rng.uniform(-1, 1, n))
        else:
            R = np.full(n, p.R)
            C = np.full(n, p.C)
        self._inv_RC = 1.0 / (R * C)
        self._heat = p.eta * p.P_rated / C
        self._noise = p.sigma * np.sqrt(cfg.dt)
        self.k = 0
        self.switches = np.zeros(n, dtype=np.int64)
        self.events = []
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def close(self):
        if self._pool:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def observe(self) -> tuple[np.ndarray, int, float]:
        """``(H_k, escapes, Y_k)`` for the current state."""
        H, esc = histogram(self.x, self.m, self.grid)
        return H, esc, self.cfg.params.P_rated * int(self.m.sum())

    def _draw(self, b):
        lo, hi = self._bounds[b]
        g = self._rngs[b]
        return g.standard_normal(hi - lo), g.random(hi - lo)

    def step(self, pol: SwitchPolicy, theta_a: float) -> None:
        nb = len(self._bounds)
        draws = list(self._pool.map(self._draw, range(nb))) if self._pool else [self._draw(b) for b in range(nb)]
        z = np.concatenate([d[0] for d in draws])
        u = np.concatenate([d[1] for d in draws])
        x, m = self.x, self.m
        I, _ = self.grid.bin_clipped(x, m)
        m_new = apply_randomized_policy(I, m, pol, u, x=x, p=self.cfg.params).astype(np.int8)
        changed = m_new != m
        self.switches += changed
        if self.cfg.record_switches and changed.any():
            idx = np.flatnonzero(changed)
            self.events.append((self.k, idx, m_new[idx]))
        self.m = m_new
        self.x = x + (-(x - theta_a) * self._inv_RC - m_new * self._heat) * self.cfg.dt + self._noise * z
        self.k += 1


def simulate_ensemble(cfg: EnsembleConfig, grid: CvGrid, policy_schedule=None,
                      threads: int = 1) -> EnsembleTrace:
    """Simulate ``cfg.horizon`` steps.

    ``policy_schedule`` is ``None`` (nominal), a single policy, or one policy
    per step.
    """
    K = cfg.horizon
    if policy_schedule is None or isinstance(policy_schedule, SwitchPolicy):
        pol0 = policy_schedule or nominal_policy(grid)
        policy_schedule = [pol0] * K
    if len(policy_schedule) < K:
        raise ValueError("policy schedule shorter than the horizon")

    H = np.zeros((K + 1, 2 * grid.N), dtype=np.int64)
    Y = np.zeros(K + 1)
    escapes = 0
    with EnsembleRunner(cfg, grid, threads) as run:
        for k in range(K + 1):
            H[k], esc, Y[k] = run.observe()
            escapes += esc
            if k < K:
                run.step(policy_schedule[k], float(cfg.theta_a_series[k]))
    if escapes:
        log.info("ensemble: %d TCL-steps outside the chain spans", escapes)
    return EnsembleTrace(Y=Y, H=H, switch_counts=run.switches, escapes=escapes,
                         x_final=run.x, m_final=run.m, switch_events=run.events)


def compare_marginals(H, nu) -> float:
    """Total-variation distance between ``H / H.sum()`` and ``nu``."""
    H = np.asarray(H, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if H.shape != nu.shape:
        raise ValueError("histogram and marginal dimensions differ")
    return 0.5 * float(np.abs(H / H.sum() - nu).sum())


def single_tcl_trajectory(x0: float, m0: int, p: TclParams, theta_a: float, dt: float,
                          steps: int, rule, noise=None) -> tuple[np.ndarray, np.ndarray]:
    """Scalar loop used to compare switching rules; ``rule(x, m) -> next mode``."""
    xs = np.empty(steps + 1)
    ms = np.empty(steps + 1, dtype=int)
    x, m = float(x0), int(m0)
    for k in range(steps + 1):
        xs[k], ms[k] = x, m
        if k == steps:
            break
        m = rule(x, m)
        x = x + (-(x - theta_a) / (p.R * p.C) - m * p.eta * p.P_rated / p.C) * dt
        if noise is not None:
            x += p.sigma * np.sqrt(dt) * noise[k]
    return xs, ms


def thermostat_rule(p: TclParams):
    return lambda x, m: thermostat_next_mode(x, m, p)


def policy_rule(pol: SwitchPolicy, grid: CvGrid, p: TclParams | None = None, draw=0.5):
    def rule(x, m):
        I, _ = grid.bin_clipped(np.array([x]), np.array([m]))
        return int(apply_randomized_policy(I[0], m, pol, draw, x=x if p else None, p=p))

    return rule
