import numpy as np
import pytest

from helpers import cfl_dt
from tclagg.assembly import assemble_rate_matrix
from tclagg.config import load_preset
from tclagg import experiments as ex
from tclagg.ensemble import (
    EnsembleConfig,
    EnsembleRunner,
    apply_randomized_policy,
    compare_marginals,
    histogram,
    policy_rule,
    simulate_ensemble,
    single_tcl_trajectory,
    thermostat_rule,
)
from tclagg.factorization import (
    make_policy,
    nominal_policy,
    policy_matrix,
    run_aggregate,
    stationary_marginal,
    weather_matrix,
)
from tclagg.physics import OFF, ON


def _cfg(params, dt, steps, n=2000, seed=7, theta=32.0, **kw):
    return EnsembleConfig(n_tcl=n, seed=seed, dt=dt, horizon=steps, params=params,
                          theta_a_series=np.full(steps, theta), **kw)


class TestRandomizedPolicy:
    def test_thermostat_cv_always_switches(self, grid):
        pol = nominal_policy(grid)
        draws = np.linspace(0, 0.999, 50)
        assert np.all(apply_randomized_policy(np.full(50, grid.N - 1), np.zeros(50, int), pol, draws) == ON)
        assert np.all(apply_randomized_policy(np.zeros(50, int), np.ones(50, int), pol, draws) == OFF)

    def test_zero_probability_keeps_mode(self, grid):
        pol = make_policy(grid, 0.0, 0.0)
        assert apply_randomized_policy(grid.m_idx + 2, OFF, pol, 0.0) == OFF
        assert apply_randomized_policy(3, ON, pol, 0.0) == ON

    def test_switch_frequency(self, grid):
        """kappa = 0.3 switches 0.3 +/- 0.01 of 1e5 draws."""
        pol = make_policy(grid, 0.3, 0.3)
        u = np.random.default_rng(0).random(100_000)
        j = grid.m_idx + 1
        assert apply_randomized_policy(np.full(u.size, j), np.zeros(u.size, int), pol, u).mean() == \
            pytest.approx(0.3, abs=0.01)

    def test_thermostat_overrides(self, grid, params):
        pol = make_policy(grid, 0.0, 0.0)
        assert apply_randomized_policy(grid.N - 2, OFF, pol, 0.99, x=21.0, p=params) == ON
        assert apply_randomized_policy(1, ON, pol, 0.99, x=19.0, p=params) == OFF
        with pytest.raises(ValueError):
            apply_randomized_policy(1, ON, pol, 0.5, x=19.0)

    def test_nominal_policy_is_thermostat(self, grid, params):
        """Without the override the nominal policy alone reproduces the hysteresis law."""
        dt = cfl_dt(grid, params, 32.0)
        noise = np.random.default_rng(9).standard_normal(3000)
        a = single_tcl_trajectory(20.0, OFF, params, 32.0, dt, 3000, thermostat_rule(params), noise)
        b = single_tcl_trajectory(20.0, OFF, params, 32.0, dt, 3000, policy_rule(nominal_policy(grid), grid), noise)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestRunner:
    @pytest.fixture
    def dt(self, grid, params):
        return cfl_dt(grid, params, 32.0)

    def test_same_seed_is_bit_identical(self, grid, params, dt):
        a = simulate_ensemble(_cfg(params, dt, 50), grid)
        b = simulate_ensemble(_cfg(params, dt, 50), grid)
        assert np.array_equal(a.H, b.H) and np.array_equal(a.Y, b.Y) and np.array_equal(a.x_final, b.x_final)

    def test_thread_count_does_not_matter(self, grid, params, dt):
        a = simulate_ensemble(_cfg(params, dt, 30, n=20_000), grid, threads=1)
        b = simulate_ensemble(_cfg(params, dt, 30, n=20_000), grid, threads=3)
        assert np.array_equal(a.H, b.H) and np.array_equal(a.x_final, b.x_final)

    def test_seeds_differ(self, grid, params, dt):
        a = simulate_ensemble(_cfg(params, dt, 20, seed=1), grid)
        b = simulate_ensemble(_cfg(params, dt, 20, seed=2), grid)
        assert not np.array_equal(a.H, b.H)

    def test_conservation_and_power(self, grid, params, dt):
        tr = simulate_ensemble(_cfg(params, dt, 100, n=3000), grid, make_policy(grid, 0.05, 0.05))
        assert np.all(tr.H.sum(axis=1) == 3000)
        on = tr.H[:, grid.N :].sum(axis=1)
        assert np.array_equal(tr.Y, params.P_rated * on)

    def test_initial_conditions(self, grid, params, dt):
        tr = simulate_ensemble(_cfg(params, dt, 0, init="interval", init_interval=(19.0, 19.3)), grid)
        assert tr.H[0, grid.N :].sum() == 0
        assert np.all((tr.x_final > 19.0) & (tr.x_final < 19.3))
        nu = np.zeros(2 * grid.N)
        nu[grid.N + 5] = 1.0
        tr = simulate_ensemble(_cfg(params, dt, 0, init="marginal", init_marginal=nu), grid)
        assert tr.H[0, grid.N + 5] == tr.n_tcl

    def test_switch_log(self, grid, params, dt):
        cfg = _cfg(params, dt, 60, record_switches=True)
        tr = simulate_ensemble(cfg, grid)
        assert sum(len(idx) for _, idx, _ in tr.switch_events) == tr.switch_counts.sum()

    def test_short_weather_rejected(self, params, dt):
        with pytest.raises(ValueError):
            EnsembleConfig(10, 1, dt, 5, params, np.full(3, 32.0))

    def test_runner_steps_match_driver(self, grid, params, dt):
        cfg = _cfg(params, dt, 10)
        tr = simulate_ensemble(cfg, grid)
        with EnsembleRunner(cfg, grid) as run:
            for _ in range(10):
                run.step(nominal_policy(grid), 32.0)
            H, _, Y = run.observe()
        assert np.array_equal(H, tr.H[-1]) and Y == tr.Y[-1]


class TestThermostatWrapping:
    def test_every_out_of_band_tcl_gets_forced_mode(self, grid, params):
        """After each decision no TCL at or beyond a deadband limit keeps the wrong mode."""
        dt = cfl_dt(grid, params, 32.0)
        with EnsembleRunner(_cfg(params, dt, 200, n=5000), grid) as run:
            for _ in range(200):
                x_before = run.x.copy()
                run.step(make_policy(grid, 0.02, 0.02), 32.0)
                assert np.all(run.m[x_before >= params.lambda_max] == ON)
                assert np.all(run.m[x_before <= params.lambda_min] == OFF)

    def test_excursion_within_five_noise_sd(self, grid, params):
        """No temperature beyond [lambda_min - 5 s, lambda_max + 5 s], s = sigma sqrt(dt), in 1e6 TCL-steps."""
        dt = cfl_dt(grid, params, 32.0)
        band = 5 * params.sigma * np.sqrt(dt)
        lo, hi = np.inf, -np.inf
        with EnsembleRunner(_cfg(params, dt, 200, n=5000), grid) as run:
            for _ in range(200):
                run.step(nominal_policy(grid), 32.0)
                lo, hi = min(lo, run.x.min()), max(hi, run.x.max())
        assert params.lambda_min - band <= lo and hi <= params.lambda_max + band


class TestMarginalComparison:
    def test_tv_extremes(self):
        assert compare_marginals(np.array([2, 2, 0, 0]), np.array([0.5, 0.5, 0, 0])) == 0.0
        assert compare_marginals(np.array([4, 0, 0, 0]), np.array([0, 0, 0.5, 0.5])) == 1.0
        with pytest.raises(ValueError):
            compare_marginals(np.ones(4), np.ones(3) / 3)

    def test_histogram_counts_escapes(self, grid):
        x = np.array([16.0, 20.0, 20.0, 30.0])
        m = np.array([OFF, OFF, ON, ON])
        H, esc = histogram(x, m, grid)
        assert H.sum() == 4 and esc == 2

    def test_per_bin_standard_errors(self, grid, params):
        """>= 95% of (step, bin) frequencies lie within 4 standard errors of the model after burn-in."""
        theta, n = 30.0, 50_000
        dt = cfl_dt(grid, params, theta)
        pol = make_policy(grid, 0.02, 0.02)
        nu = stationary_marginal(policy_matrix(pol) @ weather_matrix(assemble_rate_matrix(grid, theta, params, 1 / dt), dt))
        steps = int(6.0 / dt)
        tr = simulate_ensemble(_cfg(params, dt, steps, n=n, seed=1, theta=theta, init="marginal", init_marginal=nu),
                               grid, pol)
        ag = run_aggregate(grid, params, np.full(steps, theta), dt, tr.H[0] / n, n * params.P_rated, pol)
        b = int(2.0 / dt)
        f, mu = tr.H[b:] / n, ag.nu[b:]
        se = np.sqrt(mu * (1 - mu) / n)
        assert np.mean(np.abs(f - mu) <= 4 * se) >= 0.95

    def test_discrepancy_shrinks_with_noise(self):
        """Model/ensemble TV over the last 12 h falls as sigma grows through 0, 0.1, 0.3."""
        gaps = []
        for sigma in (0.0, 0.1, 0.3):
            cfg = load_preset("fig1")
            cfg.params = cfg.params.with_(sigma=sigma)
            cfg.n_tcl = 20_000
            s = ex.setup(cfg)
            pol = ex.config_policy(s)
            tr = simulate_ensemble(ex.ensemble_config(s), s.grid, pol)
            ag = run_aggregate(s.grid, s.params, s.theta[: s.steps], s.dt, tr.H[0] / cfg.n_tcl, s.P_agg, pol)
            half = s.steps // 2
            gaps.append(np.mean(0.5 * np.abs(tr.H[half:] / cfg.n_tcl - ag.nu[half:]).sum(axis=1)))
        assert gaps[0] > gaps[1] > gaps[2]
