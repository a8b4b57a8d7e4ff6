import math

import numpy as np
import pytest

from helpers import cfl_dt
from tclagg.assembly import (
    CflError,
    DriftSignError,
    assemble_rate_matrix,
    check_rate_matrix,
    matches_skeleton,
    max_stable_dt,
    read_triplets,
    sparsity_skeleton,
    transition_matrix,
    write_triplets,
)
from tclagg.factorization import stationary_marginal
from tclagg.grid import grid_for_deadband
from tclagg.physics import OFF, ON, drift


@pytest.fixture
def rate(grid, params):
    return assemble_rate_matrix(grid, 32.0, params, alpha=1.0 / cfl_dt(grid, params, 32.0))


class TestStructure:
    def test_generator_properties(self, rate):
        rep = check_rate_matrix(rate)
        assert rep.passed, rep.lines()
        assert rep.max_abs_row_sum <= 1e-12

    def test_interior_face_rates(self, rate, grid, params):
        """Off faces carry F + D/2 upward and D/2 downward; on faces the mirror."""
        A, N, dl = rate.A, grid.N, grid.delta_lambda
        half_D = 0.5 * params.sigma**2 / dl**2
        j = 10
        F_off = drift(grid.edges_off[j + 1], OFF, 32.0, params) / dl
        assert A[j, j + 1] == pytest.approx(F_off + half_D, rel=1e-14)
        assert A[j + 1, j] == pytest.approx(half_D, rel=1e-14)
        F_on = drift(grid.edges_on[j + 1], ON, 32.0, params) / dl
        assert A[N + j + 1, N + j] == pytest.approx(-F_on + half_D, rel=1e-14)
        assert A[N + j, N + j + 1] == pytest.approx(half_D, rel=1e-14)

    def test_noise_free_on_row(self, grid, params):
        """With sigma = 0 an interior on row has exactly the outflow pair."""
        p = params.with_(sigma=0.0)
        A = assemble_rate_matrix(grid, 32.0, p, alpha=50.0).A
        N = grid.N
        for i in range(2, N - 1):
            row = A[N + i]
            nz = np.flatnonzero(row)
            assert nz.tolist() == [N + i - 1, N + i]
            F = drift(grid.edges_on[i], ON, 32.0, p) / grid.delta_lambda
            assert row[N + i - 1] == pytest.approx(-F, rel=1e-14)
            assert row[N + i] == pytest.approx(F, rel=1e-14)

    def test_thermostat_rows(self, rate, grid):
        A, N, a = rate.A, grid.N, rate.alpha
        assert np.flatnonzero(A[N - 1]).tolist() == [N - 1, N + grid.q - 1]
        assert A[N - 1, N - 1] == -a and A[N - 1, N + grid.q - 1] == a
        assert np.flatnonzero(A[N]).tolist() == [grid.m_idx - 1, N]
        assert A[N, N] == -a and A[N, grid.m_idx - 1] == a
        # no diffusive back-flow out of the thermostat CVs
        assert A[N - 1, N - 2] == 0.0 and A[N, N + 1] == 0.0

    def test_skeleton(self, rate, grid):
        assert matches_skeleton(rate)
        mask = sparsity_skeleton(grid)
        assert mask.sum() == 2 * (3 * grid.N - 2) + 2
        assert not mask[0, grid.N] and not mask[grid.N, 0]

    def test_stray_entry_breaks_skeleton(self, rate):
        A = rate.A.copy()
        A[0, rate.N + 3] = 1.0
        A[0, 0] -= 1.0
        bad = type(rate)(A=A, grid=rate.grid, theta_a=rate.theta_a, alpha=rate.alpha)
        assert not matches_skeleton(bad)

    def test_drift_sign_errors(self, grid, params):
        with pytest.raises(DriftSignError, match="too low"):
            assemble_rate_matrix(grid, 20.5, params, 10.0)
        with pytest.raises(DriftSignError, match="undersized"):
            assemble_rate_matrix(grid, 32.0, params.with_(P_rated=0.5), 10.0)

    def test_alpha_must_be_positive(self, grid, params):
        with pytest.raises(ValueError):
            assemble_rate_matrix(grid, 32.0, params, 0.0)

    def test_noise_free_upwind_transport(self, grid, params):
        """On-chain mass above any edge cannot grow under a sigma = 0 step."""
        p = params.with_(sigma=0.0)
        dt = cfl_dt(grid, p, 32.0)
        P = transition_matrix(assemble_rate_matrix(grid, 32.0, p, 1.0 / dt), dt)
        N = grid.N
        rng = np.random.default_rng(1)
        nu = np.zeros(2 * N)
        nu[N + 1 :] = rng.random(N - 1)  # skip the thermostat CV
        nu /= nu.sum()
        nxt = nu @ P
        above = np.cumsum(nu[N:][::-1])[::-1]
        above_next = np.cumsum(nxt[N:][::-1])[::-1]
        assert np.all(above_next[1:] <= above[1:] + 1e-15)


class TestCheckReport:
    def test_sign_flip_is_located(self, rate):
        A = rate.A.copy()
        A[7, 8] = -A[7, 8]
        rep = check_rate_matrix(A)
        assert not rep.passed
        assert rep.worst_offdiag == (7, 8)
        assert any(line.startswith("FAIL off-diagonal") for line in rep.lines())

    def test_positive_diagonal_fails(self, rate):
        A = rate.A.copy()
        A[3, 3] = 1.0
        rep = check_rate_matrix(A)
        assert not rep.diag_ok and rep.worst_diag == 3
        assert not rep.row_sums_ok and rep.worst_row == 3

    def test_zero_matrix_passes(self):
        assert check_rate_matrix(np.zeros((4, 4))).passed


class TestTimeStep:
    def test_bound_from_diagonal(self):
        assert max_stable_dt(np.diag([-4.0, -2.0, -5.0])) == pytest.approx(0.2)

    def test_homogeneity(self, rate):
        assert max_stable_dt(2 * rate.A) == pytest.approx(0.5 * max_stable_dt(rate.A))

    def test_unconstrained(self):
        assert max_stable_dt(np.zeros((3, 3))) == math.inf

    def test_switch_rate_sets_bound(self, grid, params):
        dt = cfl_dt(grid, params, 32.0)
        A = assemble_rate_matrix(grid, 32.0, params, 1.0 / dt)
        assert max_stable_dt(A) == pytest.approx(dt, rel=1e-14)

    def test_two_state(self):
        P = transition_matrix(np.array([[-1.0, 1.0], [1.0, -1.0]]), 0.5)
        assert np.array_equal(P, np.full((2, 2), 0.5))

    def test_small_step_is_near_identity(self, rate):
        P = transition_matrix(rate, 1e-12)
        assert np.abs(P - np.eye(P.shape[0])).max() < 1e-8

    def test_stochastic_at_bound(self, rate):
        P = transition_matrix(rate, max_stable_dt(rate))
        assert np.abs(P.sum(axis=1) - 1).max() <= 1e-12
        assert P.min() >= 0 and P.max() <= 1

    def test_cfl_error(self, rate):
        with pytest.raises(CflError, match="stability bound"):
            transition_matrix(rate, 1.01 * max_stable_dt(rate))

    def test_rejects_nonpositive(self, rate):
        with pytest.raises(ValueError):
            transition_matrix(rate, 0.0)


def test_grid_refinement_screen(params):
    """Halving the CV width changes the stationary CDF less each time."""
    edges = np.arange(17.2, 23.0, 0.2)
    cdfs = []
    for N, K in ((21, 10), (41, 20), (81, 40)):
        g = grid_for_deadband(N, 19.0, 21.0, K)
        dt = cfl_dt(g, params, 32.0)
        nu = stationary_marginal(transition_matrix(assemble_rate_matrix(g, 32.0, params, 1.0 / dt), dt))
        cdfs.append(np.concatenate([
            np.interp(edges, g.edges_off, np.r_[0, np.cumsum(nu[:N])]),
            np.interp(edges, g.edges_on, np.r_[0, np.cumsum(nu[N:])]),
        ]))
    coarse = np.abs(cdfs[1] - cdfs[0]).max()
    fine = np.abs(cdfs[2] - cdfs[1]).max()
    assert fine < coarse


def test_triplet_round_trip(rate, tmp_path):
    path = tmp_path / "A.txt"
    write_triplets(path, rate.A, header="theta_a=32")
    back = read_triplets(path)
    assert np.array_equal(back, rate.A)
    assert path.read_text().splitlines()[0] == f"# shape {2 * rate.N} {2 * rate.N}"
