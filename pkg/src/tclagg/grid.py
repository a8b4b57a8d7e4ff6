"""Control-volume layout for the coupled off/on density chains.

Both chains hold ``N`` control volumes (CVs) of width ``delta_lambda``.  The off
chain spans ``[lambda_low, lambda_max + delta_lambda]`` so its last CV sits just
above the deadband; the on chain spans ``[lambda_min - delta_lambda,
lambda_high]`` so its first CV sits just below it.  Indices are 1-based in the
public attributes ``q`` and ``m_idx`` (matching the usual CV numbering) and
0-based in every array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .physics import ON

_REL_TOL = 1e-9


def _as_count(ratio: float, what: str) -> int:
    n = int(round(ratio))
    if abs(ratio - n) > _REL_TOL * max(1.0, abs(ratio)):
        raise ValueError(f"{what} is not an integer multiple of the CV width (ratio {ratio:.12g})")
    return n


@dataclass(frozen=True)
class CvGrid:
    N: int
    delta_lambda: float
    lambda_min: float
    lambda_max: float
    lambda_low: float
    lambda_high: float
    q: int
    m_idx: int

    @property
    def edges_off(self) -> np.ndarray:
        return self.lambda_low + self.delta_lambda * np.arange(self.N + 1)

    @property
    def edges_on(self) -> np.ndarray:
        return (self.lambda_min - self.delta_lambda) + self.delta_lambda * np.arange(self.N + 1)

    @property
    def lambda_off(self) -> np.ndarray:
        e = self.edges_off
        return 0.5 * (e[:-1] + e[1:])

    @property
    def lambda_on(self) -> np.ndarray:
        e = self.edges_on
        return 0.5 * (e[:-1] + e[1:])

    @property
    def n_deadband(self) -> int:
        """Number of CVs of either chain inside ``[lambda_min, lambda_max]``."""
        return self.q - 1

    def edges(self, chain: int) -> np.ndarray:
        return self.edges_on if chain == ON else self.edges_off

    def nodes(self, chain: int) -> np.ndarray:
        return self.lambda_on if chain == ON else self.lambda_off

    # Deadband index maps (0-based).  Off CV ``m_idx + j`` and on CV ``2 + j``
    # cover the same temperature interval for j = 0 .. n_deadband - 1.
    @property
    def deadband_off(self) -> np.ndarray:
        return np.arange(self.m_idx - 1, self.N - 1)

    @property
    def deadband_on(self) -> np.ndarray:
        return np.arange(1, self.q)

    def off_to_on_same_cv(self, j):
        """On-chain index covering the same temperatures as off CV ``j`` (0-based)."""
        return np.asarray(j) - (self.m_idx - 1) + 1

    def on_to_off_same_cv(self, i):
        """Off-chain index covering the same temperatures as on CV ``i`` (0-based)."""
        return np.asarray(i) + (self.m_idx - 1) - 1

    def bin_state(self, x, chain: int):
        """CV index (0-based) holding temperature ``x``; intervals are (lower, upper].

        Raises ``ValueError`` when ``x`` lies outside the chain span, which means
        the simulation domain ``[lambda_low, lambda_high]`` is too narrow.
        """
        e = self.edges(chain)
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(e, x, side="left") - 1
        # the lowest edge itself belongs to CV 0
        idx = np.where(x == e[0], 0, idx)
        bad = (idx < 0) | (idx >= self.N)
        if np.any(bad):
            xb = x[bad] if x.ndim else x
            raise ValueError(
                f"temperature {np.ravel(xb)[0]:.6g} outside the "
                f"{'on' if chain == ON else 'off'} chain span [{e[0]:.6g}, {e[-1]:.6g}]"
            )
        return idx if idx.ndim else int(idx)

    def bin_clipped(self, x, chain) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized binning that clips escapes into the end CVs.

        ``chain`` may be an array of modes.  Returns ``(idx, escaped)``.
        """
        x = np.asarray(x, dtype=float)
        chain = np.broadcast_to(np.asarray(chain), x.shape)
        e_off, e_on = self.edges_off, self.edges_on
        k = np.where(
            chain == ON,
            np.searchsorted(e_on, x, side="left") - 1,
            np.searchsorted(e_off, x, side="left") - 1,
        )
        lo = np.where(chain == ON, e_on[0], e_off[0])
        k = np.where(x == lo, 0, k)
        escaped = (k < 0) | (k >= self.N)
        return np.clip(k, 0, self.N - 1), escaped

    def shifted(self, offset: float) -> "CvGrid":
        return build_grid(
            self.N,
            self.lambda_min + offset,
            self.lambda_max + offset,
            self.lambda_low + offset,
            self.lambda_high + offset,
        )


def build_grid(N: int, lambda_min: float, lambda_max: float,
               lambda_low: float, lambda_high: float) -> CvGrid:
    """Build the dual-chain grid.

    The CV width follows from the off-chain span,
    ``N * dl = lambda_max + dl - lambda_low``.  The on chain must then have the
    same span, which forces ``lambda_high - lambda_min == lambda_max - lambda_low``.
    """
    if not lambda_low < lambda_min < lambda_max < lambda_high:
        raise ValueError("need lambda_low < lambda_min < lambda_max < lambda_high")
    if N < 6:
        raise ValueError("N must be at least 6")
    dl = (lambda_max - lambda_low) / (N - 1)
    n_db = _as_count((lambda_max - lambda_min) / dl, "deadband width")
    n_below = _as_count((lambda_min - lambda_low) / dl, "lambda_min - lambda_low")
    n_above = _as_count((lambda_high - lambda_max) / dl, "lambda_high - lambda_max")
    if n_below != n_above:
        raise ValueError(
            "on and off chains must have equal spans: "
            f"lambda_high - lambda_max = {lambda_high - lambda_max:.6g} but "
            f"lambda_min - lambda_low = {lambda_min - lambda_low:.6g}"
        )
    if n_db < 2:
        raise ValueError("deadband must contain at least two CVs")
    m_idx = n_below + 1  # off CV whose lower edge is lambda_min
    q = n_db + 1  # on CV whose upper edge is lambda_max
    if not (2 <= q <= N - 1 and 2 <= m_idx <= N - 1):
        raise ValueError("N too small to hold the deadband plus boundary CVs")
    return CvGrid(N=N, delta_lambda=dl, lambda_min=lambda_min, lambda_max=lambda_max,
                  lambda_low=lambda_low, lambda_high=lambda_high, q=q, m_idx=m_idx)


def grid_for_deadband(N: int, lambda_min: float, lambda_max: float, n_deadband: int) -> CvGrid:
    """Grid with ``n_deadband`` CVs across the deadband and symmetric outer margins."""
    if not 2 <= n_deadband <= N - 3:
        raise ValueError("n_deadband must lie in [2, N - 3]")
    dl = (lambda_max - lambda_min) / n_deadband
    margin = (N - 1 - n_deadband) * dl
    return build_grid(N, lambda_min, lambda_max, lambda_min - margin, lambda_max + margin)
