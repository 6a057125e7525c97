import numpy as np
import pytest

from plasticity import (ModelParams, PopulationState, SimConfig,
                        equilibrium_mu, gillespie_propensities, rk4_solve,
                        run_simulation_study, simulate_trajectory,
                        synthesize_summary_conditional,
                        synthesize_summary_gillespie, synthesize_trajectories)
from plasticity.simulate import simulate_replicates


class TestPropensities:
    def test_pure_stem_population(self):
        p = ModelParams(1.0, 0.0, 0.5, 0.3)
        rates = gillespie_propensities(PopulationState(x=10, y=0), p)
        assert rates == (5.0, 0.0, 0.0, 0.0)

    def test_pure_non_stem_population(self):
        p = ModelParams(0.9, 0.2, 0.6, 0.5)
        rates = gillespie_propensities(PopulationState(x=0, y=100), p)
        assert rates[0] == 0.0 and rates[1] == 0.0
        assert rates[2] == pytest.approx(40.0)
        assert rates[3] == pytest.approx(10.0)

    def test_mixed_population(self):
        p = ModelParams(0.5, 0.5, 0.4, 0.2)
        rates = gillespie_propensities(PopulationState(x=3, y=4), p)
        assert rates == pytest.approx((0.6, 0.6, 0.4, 0.4))


class TestSimConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SimConfig(n0=0, mu0=0.5, t_end=4.0, record_grid=[1.0])
        with pytest.raises(ValueError):
            SimConfig(n0=10, mu0=1.5, t_end=4.0, record_grid=[1.0])
        with pytest.raises(ValueError):
            SimConfig(n0=10, mu0=0.5, t_end=4.0, record_grid=[5.0])

    def test_initial_counts_round_half_up(self):
        cfg = SimConfig(n0=5, mu0=0.5, t_end=1.0, record_grid=[1.0])
        assert cfg.initial_counts() == (3, 2)
        cfg = SimConfig(n0=10, mu0=0.44, t_end=1.0, record_grid=[1.0])
        assert cfg.initial_counts() == (4, 6)


class TestTrajectories:
    def test_absorbing_without_dedifferentiation(self):
        p = ModelParams(0.7, 0.0, 0.4, 0.3)
        cfg = SimConfig(n0=50, mu0=0.0, t_end=6.0,
                        record_grid=np.linspace(1, 6, 6), seed=1)
        r, _ = simulate_trajectory(cfg, p)
        assert np.all(r == 0.0)

    def test_all_stem_stays_all_stem(self):
        p = ModelParams(1.0, 0.5, 0.4, 0.3)
        cfg = SimConfig(n0=50, mu0=1.0, t_end=6.0,
                        record_grid=np.linspace(1, 6, 6), seed=2)
        r, _ = simulate_trajectory(cfg, p)
        assert np.all(r == 1.0)

    def test_population_growth_monotone(self):
        p = ModelParams(0.6, 0.3, 0.3, 0.25)
        cfg = SimConfig(n0=100, mu0=0.4, t_end=8.0,
                        record_grid=np.linspace(0.5, 8, 16), seed=3)
        _, totals = simulate_trajectory(cfg, p)
        assert np.all(np.diff(totals) >= 0)

    def test_bit_identical_reproducibility(self):
        p = ModelParams(0.6, 0.3, 0.3, 0.25)
        cfg = SimConfig(n0=100, mu0=0.4, t_end=8.0,
                        record_grid=np.linspace(0.5, 8, 16), seed=99)
        r1, n1 = simulate_trajectory(cfg, p, replicate=4)
        r2, n2 = simulate_trajectory(cfg, p, replicate=4)
        assert np.array_equal(r1, r2) and np.array_equal(n1, n2)
        r3, _ = simulate_trajectory(cfg, p, replicate=5)
        assert not np.array_equal(r1, r3)

    def test_yule_growth_mean(self):
        # equal rates: total count grows like n0 e^{lam t} in expectation
        p = ModelParams(0.5, 0.5, 0.3, 0.3)
        cfg = SimConfig(n0=500, mu0=0.5, t_end=4.0, record_grid=[4.0],
                        replicates=2000, seed=9)
        runs = simulate_replicates(cfg, p)
        totals = np.array([n[0] for _, n in runs])
        expected = 500.0 * np.exp(1.2)
        se = totals.std(ddof=1) / np.sqrt(totals.size)
        assert abs(totals.mean() - expected) < 3 * se

    def test_mean_proportion_matches_moment_solution(self):
        # exact-simulation mean vs the moment-equation path, three horizons
        rng = np.random.default_rng(31)
        for trial in range(5):
            p = ModelParams(rng.uniform(), rng.uniform(),
                            rng.uniform(0.08, 0.28), rng.uniform(0.08, 0.28))
            mu0 = rng.uniform(0.2, 0.8)
            n0 = 800
            grid = np.array([2.0, 8.0, 24.0])
            cfg = SimConfig(n0=n0, mu0=mu0, t_end=24.0, record_grid=grid,
                            replicates=2000, seed=600 + trial)
            runs = simulate_replicates(cfg, p)
            r = np.stack([prop for prop, _ in runs])
            x0, _ = cfg.initial_counts()
            path = rk4_solve(p, x0 / n0, 0.0, float(n0),
                             np.concatenate(([0.0], grid)))
            for j in range(grid.size):
                se = r[:, j].std(ddof=1) / np.sqrt(r.shape[0])
                assert abs(r[:, j].mean() - path.mu[j + 1]) < 3 * se


class TestSummarySynthesis:
    def test_gillespie_degenerate_case(self):
        p = ModelParams(0.7, 0.0, 0.4, 0.3)
        cfg = SimConfig(n0=50, mu0=0.0, t_end=4.0,
                        record_grid=np.linspace(1, 4, 4), seed=5)
        data = synthesize_summary_gillespie(cfg, p, n=5)
        assert np.all(data.means == 0.0) and np.all(data.variances == 0.0)

    def test_gillespie_grid_shape(self):
        p = ModelParams(0.6, 0.3, 0.2, 0.15)
        grid = np.linspace(0.0, 24.0, 13)
        cfg = SimConfig(n0=100, mu0=0.3, t_end=24.0, record_grid=grid,
                        seed=6)
        data = synthesize_summary_gillespie(cfg, p, n=5)
        assert data.times.size == 13 and data.k == 12
        assert data.n == 5

    def test_gillespie_needs_two_trajectories(self):
        p = ModelParams(0.6, 0.3, 0.2, 0.15)
        cfg = SimConfig(n0=100, mu0=0.3, t_end=4.0, record_grid=[4.0], seed=6)
        with pytest.raises(ValueError):
            synthesize_summary_gillespie(cfg, p, n=1)

    def test_gillespie_reaches_equilibrium_proportion(self):
        # 200 trajectories at t=24: the across-trajectory mean proportion
        # sits at the stable root of the mean dynamics
        p = ModelParams(0.9, 0.2, 0.6, 0.5)
        cfg = SimConfig(n0=10, mu0=0.5, t_end=24.0, record_grid=[24.0],
                        replicates=200, seed=44)
        runs = simulate_replicates(cfg, p)
        m24 = np.mean([r[0] for r, _ in runs])
        assert abs(m24 - equilibrium_mu(p)) < 0.03

    def test_conditional_degenerate_case(self):
        p = ModelParams(0.7, 0.0, 0.4, 0.3)
        grid = np.linspace(0.0, 4.0, 7)
        rng = np.random.default_rng(1)
        data = synthesize_summary_conditional(p, 0.0, 0.0, grid, 5, 1000.0,
                                              rng)
        # absorbing start: each sampled mean stays within 5 posterior sds
        from plasticity.dynamics import improved_euler_step
        assert np.all(data.means < 5 * np.sqrt(0.4 * 2 / 3 / (2 * 1000) / 5))

    def test_conditional_variances_nonnegative(self, ref_params):
        grid = np.linspace(0.0, 24.0, 37)
        rng = np.random.default_rng(2)
        data = synthesize_summary_conditional(ref_params, 0.4, 0.003, grid,
                                              5, 1000.0, rng)
        assert np.all(data.variances >= 0.0)

    def test_conditional_fixed_seed_is_deterministic(self, ref_params):
        grid = np.linspace(0.0, 24.0, 37)
        a = synthesize_summary_conditional(ref_params, 0.4, 0.003, grid, 5,
                                           1000.0, np.random.default_rng(7))
        b = synthesize_summary_conditional(ref_params, 0.4, 0.003, grid, 5,
                                           1000.0, np.random.default_rng(7))
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.variances, b.variances)

    def test_conditional_requires_uniform_grid(self, ref_params):
        with pytest.raises(ValueError):
            synthesize_summary_conditional(ref_params, 0.4, 0.003,
                                           [0.0, 1.0, 3.0], 5, 1000.0,
                                           np.random.default_rng(1))

    def test_trajectory_matrix_synthesis(self):
        p = ModelParams(0.6, 0.3, 0.3, 0.25)
        grid = np.linspace(0.0, 8.0, 13)
        cfg = SimConfig(n0=200, mu0=0.3, t_end=8.0, record_grid=grid, seed=8)
        ts = synthesize_trajectories(cfg, p, n=4)
        assert ts.r.shape == (4, 13)
        assert np.all((ts.r >= 0) & (ts.r <= 1))


class TestStudies:
    def test_study_one_shapes(self):
        datasets = run_simulation_study(1, 100, seed=12)
        assert len(datasets) == 100
        assert all(ds.data.times.size == 37 for ds in datasets)
        assert all(ds.data.n == 5 and ds.n0 == 1000 for ds in datasets)
        assert datasets[0].data.times[1] == pytest.approx(2.0 / 3.0)

    def test_study_one_deterministic(self):
        a = run_simulation_study(1, 3, seed=12)
        b = run_simulation_study(1, 3, seed=12)
        for x, y in zip(a, b):
            assert np.array_equal(x.data.means, y.data.means)
            assert x.params == y.params

    def test_study_two_shape(self):
        datasets = run_simulation_study(2, 1, seed=55)
        assert len(datasets) == 1
        ds = datasets[0]
        assert ds.data.times.size == 13
        assert np.array_equal(ds.data.times, np.linspace(0.0, 24.0, 13))
        assert ds.data.variances[0] == 0.0   # shared initial state

    def test_study_three_sweep_shape(self):
        datasets = run_simulation_study(3, 1, seed=65)
        assert len(datasets) == 5
        assert [ds.n0 for ds in datasets] == [100, 200, 500, 1000, 2000]

    def test_unknown_study_rejected(self):
        with pytest.raises(ValueError):
            run_simulation_study("4", 1, seed=0)
