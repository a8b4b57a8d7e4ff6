"""Finite-volume assembly of the generator of the coupled density chains.

State ordering is ``[off CV 0..N-1, on CV 0..N-1]`` and the matrix acts on row
vectors, ``d nu / dt = nu A``, so ``A[i, j]`` is the rate from state ``i`` to
state ``j``.  Convection is upwinded (off drift carries mass to warmer CVs, on
drift to colder CVs); diffusion uses a central difference, giving a rate of
``D / 2`` across each interior face with ``D = sigma**2 / delta_lambda**2``.

The two thermostat-boundary CVs (off CV N-1 above ``lambda_max`` and on CV 0
below ``lambda_min``) drain at rate ``alpha`` into on CV ``q - 1`` and off CV
``m_idx - 1`` respectively, and receive no diffusive back-flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import CvGrid
from .physics import OFF, ON, TclParams, drift


DRIFT_ZERO = 1e-9  # degC/h


class DriftSignError(ValueError):
    """Raised when the drift direction breaks the upwind stencil."""


class CflError(ValueError):
    """Raised when a time step violates ``dt <= 1 / |A_ii|``."""


@dataclass(frozen=True)
class DiscretizationCoeffs:
    D: float
    F_off: np.ndarray  # interior faces 1..N-1 of the off chain (1/h)
    F_on: np.ndarray
    alpha: float


@dataclass(frozen=True)
class RateMatrix:
    A: np.ndarray
    grid: CvGrid
    theta_a: float
    alpha: float
    t: float = 0.0
    coeffs: DiscretizationCoeffs | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def A_off(self) -> np.ndarray:
        return self.A[: self.N, : self.N]

    @property
    def A_on(self) -> np.ndarray:
        return self.A[self.N :, self.N :]


def discretization_coeffs(grid: CvGrid, theta_a: float, p: TclParams, alpha: float) -> DiscretizationCoeffs:
    dl = grid.delta_lambda
    f_off = drift(grid.edges_off[1:-1], OFF, theta_a, p)
    f_on = drift(grid.edges_on[1:-1], ON, theta_a, p)
    # edges carry round-off; a drift this small is zero for upwinding purposes
    f_off = np.where(np.abs(f_off) < DRIFT_ZERO, 0.0, f_off)
    f_on = np.where(np.abs(f_on) < DRIFT_ZERO, 0.0, f_on)
    F_off, F_on = f_off / dl, f_on / dl
    return DiscretizationCoeffs(D=p.sigma**2 / dl**2, F_off=F_off, F_on=F_on, alpha=float(alpha))


def assemble_rate_matrix(grid: CvGrid, theta_a: float, p: TclParams, alpha: float,
                         t: float = 0.0) -> RateMatrix:
    """Assemble ``A(t)`` for ambient temperature ``theta_a``.

    Raises
    ------
    DriftSignError
        If the off drift is negative or the on drift positive at any interior
        face (ambient below the deadband or an undersized compressor).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    c = discretization_coeffs(grid, theta_a, p, alpha)
    N = grid.N
    bad_off = np.flatnonzero(c.F_off < 0)
    if bad_off.size:
        k = bad_off[0]
        raise DriftSignError(
            f"off-chain drift is negative ({c.F_off[k] * grid.delta_lambda:.4g} degC/h) on the upper "
            f"face of off CV {k} (T = {grid.edges_off[k + 1]:.4g} degC); theta_a={theta_a:.4g} is too low"
        )
    bad_on = np.flatnonzero(c.F_on > 0)
    if bad_on.size:
        k = bad_on[0]
        raise DriftSignError(
            f"on-chain drift is positive ({c.F_on[k] * grid.delta_lambda:.4g} degC/h) on the upper "
            f"face of on CV {k} (T = {grid.edges_on[k + 1]:.4g} degC); P_rated is undersized "
            f"for theta_a={theta_a:.4g}"
        )

    A = np.zeros((2 * N, 2 * N))
    half_D = 0.5 * c.D
    i = np.arange(N - 1)  # face between CV i and CV i+1

    # off chain: upwind convection toward higher index
    off = i
    A[off, off + 1] = c.F_off + half_D
    A[off + 1, off] = half_D
    A[N - 1, N - 2] = 0.0  # thermostat CV drains only through the switch

    # on chain: upwind convection toward lower index
    on = N + i
    A[on, on + 1] = half_D
    A[on + 1, on] = -c.F_on + half_D
    A[N, N + 1] = 0.0

    np.fill_diagonal(A, 0.0)
    A[np.diag_indices(2 * N)] = -A.sum(axis=1)

    # switching sources/sinks
    A[N - 1, N - 1] = -alpha
    A[N - 1, N + grid.q - 1] = alpha
    A[N, N] = -alpha
    A[N, grid.m_idx - 1] = alpha
    return RateMatrix(A=A, grid=grid, theta_a=float(theta_a), alpha=float(alpha), t=float(t), coeffs=c)


@dataclass
class RateMatrixReport:
    max_abs_row_sum: float
    worst_row: int
    max_diag: float
    worst_diag: int
    min_offdiag: float
    worst_offdiag: tuple[int, int]
    tol: float

    @property
    def row_sums_ok(self) -> bool:
        return self.max_abs_row_sum <= self.tol

    @property
    def diag_ok(self) -> bool:
        return self.max_diag <= self.tol

    @property
    def offdiag_ok(self) -> bool:
        return self.min_offdiag >= -self.tol

    @property
    def passed(self) -> bool:
        return self.row_sums_ok and self.diag_ok and self.offdiag_ok

    def lines(self) -> list[str]:
        def tag(ok):
            return "PASS" if ok else "FAIL"

        return [
            f"{tag(self.row_sums_ok)} row sums: max |sum| = {self.max_abs_row_sum:.3e} (row {self.worst_row})",
            f"{tag(self.diag_ok)} diagonal <= 0: max = {self.max_diag:.3e} (index {self.worst_diag})",
            f"{tag(self.offdiag_ok)} off-diagonal >= 0: min = {self.min_offdiag:.3e} (entry {self.worst_offdiag})",
        ]


def check_rate_matrix(A, tol: float = 1e-12) -> RateMatrixReport:
    """Check the generator properties; ``A`` may be a ``RateMatrix`` or an array."""
    M = np.asarray(A.A if isinstance(A, RateMatrix) else A, dtype=float)
    n = M.shape[0]
    rs = np.abs(M.sum(axis=1))
    d = np.diag(M)
    off = M.copy()
    off[np.diag_indices(n)] = np.inf
    wo = np.unravel_index(np.argmin(off), off.shape) if n > 1 else (0, 0)
    return RateMatrixReport(
        max_abs_row_sum=float(rs.max()) if n else 0.0,
        worst_row=int(rs.argmax()) if n else 0,
        max_diag=float(d.max()) if n else 0.0,
        worst_diag=int(d.argmax()) if n else 0,
        min_offdiag=float(off[wo]) if n > 1 else 0.0,
        worst_offdiag=(int(wo[0]), int(wo[1])),
        tol=tol,
    )


def sparsity_skeleton(grid: CvGrid) -> np.ndarray:
    """Boolean mask of the entries the assembly may populate."""
    N = grid.N
    mask = np.zeros((2 * N, 2 * N), dtype=bool)
    for base in (0, N):
        k = np.arange(N)
        mask[base + k, base + k] = True
        mask[base + k[:-1], base + k[1:]] = True
        mask[base + k[1:], base + k[:-1]] = True
    mask[N - 1, N + grid.q - 1] = True
    mask[N, grid.m_idx - 1] = True
    return mask


def matches_skeleton(rate: RateMatrix) -> bool:
    outside = np.abs(rate.A[~sparsity_skeleton(rate.grid)])
    N = rate.N
    return bool(
        not outside.any()
        and rate.A[N - 1, N + rate.grid.q - 1] > 0
        and rate.A[N, rate.grid.m_idx - 1] > 0
    )


def max_stable_dt(A) -> float:
    """Largest ``dt`` with ``I + dt A`` stochastic; ``math.inf`` when unconstrained."""
    M = np.asarray(A.A if isinstance(A, RateMatrix) else A, dtype=float)
    d = np.abs(np.diag(M))
    if not np.any(d > 0):
        return math.inf
    return float(1.0 / d.max())


def transition_matrix(A, dt: float) -> np.ndarray:
    """Forward-Euler transition matrix ``P = I + dt A``."""
    M = np.asarray(A.A if isinstance(A, RateMatrix) else A, dtype=float)
    if not dt > 0:
        raise ValueError("dt must be positive")
    d = np.abs(np.diag(M))
    if np.any(dt * d > 1.0 + 1e-12):
        i = int(d.argmax())
        raise CflError(
            f"dt = {dt:.6g} h exceeds the stability bound 1/|A[{i},{i}]| = {1.0 / d[i]:.6g} h"
        )
    P = np.eye(M.shape[0]) + dt * M
    # clean round-off on entries that must vanish exactly
    P[np.abs(P) < 1e-15] = 0.0
    return P


def write_triplets(path, M, header: str | None = None) -> None:
    """Dump nonzeros as ``row col value`` lines (0-based indices)."""
    M = np.asarray(M)
    r, c = np.nonzero(M)
    with open(Path(path), "w") as fh:
        fh.write(f"# shape {M.shape[0]} {M.shape[1]}\n")
        if header:
            fh.write(f"# {header}\n")
        fh.write("# row col value\n")
        for i, j in zip(r, c):
            fh.write(f"{i} {j} {float(M[i, j])!r}\n")


def read_triplets(path) -> np.ndarray:
    shape = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# shape"):
            shape = tuple(int(s) for s in line.split()[2:4])
        elif line and not line.startswith("#"):
            i, j, v = line.split()
            rows.append((int(i), int(j), float(v)))
    if shape is None:
        raise ValueError(f"{path}: missing '# shape' header")
    M = np.zeros(shape)
    for i, j, v in rows:
        M[i, j] = v
    return M
