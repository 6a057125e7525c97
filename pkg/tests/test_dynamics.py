import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasticity import (LAMBDA_MAX, ModelParams, SimConfig, StepMap,
                        equilibrium_mu, improved_euler_step, mean_rhs,
                        nt_mean_constraint, nt_mean_constraint_thirds,
                        nt_var_constraint, rk4_solve, var_rhs)
from plasticity.simulate import simulate_replicates

PARAMS = st.builds(
    ModelParams,
    alpha=st.floats(0.0, 1.0),
    beta=st.floats(0.0, 1.0),
    lambda1=st.floats(1e-6, LAMBDA_MAX),
    lambda2=st.floats(1e-6, LAMBDA_MAX),
)


class TestMeanRhs:
    def test_absorbing_boundary(self):
        p = ModelParams(0.4, 0.0, 0.3, 0.2)
        assert mean_rhs(0.0, p) == 0.0

    def test_equal_rate_root_by_substitution(self):
        p = ModelParams(0.4, 0.3, 0.25, 0.25)
        root = p.beta / (1.0 + p.beta - p.alpha)
        assert mean_rhs(root, p) == pytest.approx(0.0, abs=1e-15)

    def test_hand_evaluation(self, ref_params):
        # (l2-l1) 0.25 + (l1 a - l2 (1+b)) 0.5 + l2 b
        # = -0.025 - 0.03 + 0.1 = 0.045
        assert mean_rhs(0.5, ref_params) == pytest.approx(0.045)

    @given(p=PARAMS)
    @settings(max_examples=200, deadline=None)
    def test_unit_interval_forward_invariant(self, p):
        assert mean_rhs(0.0, p) >= 0.0
        assert mean_rhs(1.0, p) <= 1e-15


class TestVarRhs:
    def test_noise_injection_at_origin(self):
        p = ModelParams(0.4, 0.0, 0.3, 0.2)
        assert var_rhs(0.0, 0.0, 50.0, p) == pytest.approx(0.2 / 100.0)
        assert var_rhs(0.0, 0.0, 50.0, p) > 0.0

    def test_large_population_limit(self):
        p = ModelParams(0.4, 0.1, 0.3, 0.2)
        assert var_rhs(0.3, 0.0, 1e15, p) == pytest.approx(0.0, abs=1e-15)

    def test_hand_evaluation(self, ref_params):
        # [2(0.54-0.1)-1.1]*0.01 + 2(-0.1)(0.5)(0.01) + (0.1*0.5+0.5)/2000
        # = -0.0022 - 0.001 + 0.000275 = -0.002925
        val = var_rhs(0.5, 0.01, 1000.0, ref_params)
        assert val == pytest.approx(-0.002925)

    def test_rejects_nonpositive_population(self, ref_params):
        with pytest.raises(ValueError):
            var_rhs(0.5, 0.01, 0.0, ref_params)


class TestEquilibrium:
    def test_zero_is_stable_when_decay_dominates(self):
        p = ModelParams(0.5, 0.0, 0.3, 0.4)   # l1 a < l2
        assert equilibrium_mu(p) == pytest.approx(0.0, abs=1e-12)

    def test_zero_unstable_when_growth_dominates(self):
        p = ModelParams(0.9, 0.0, 0.6, 0.3)   # l1 a > l2
        root = equilibrium_mu(p)
        assert root == pytest.approx(0.8)
        assert mean_rhs(root - 1e-4, p) > 0.0 > mean_rhs(root + 1e-4, p)

    def test_equal_rates_linear_formula(self):
        p = ModelParams(0.9, 0.2, 0.25, 0.25)
        assert equilibrium_mu(p) == pytest.approx(0.2 / 0.3)

    def test_all_stem_boundary(self):
        p = ModelParams(1.0, 1.0, 0.4, 0.3)
        assert equilibrium_mu(p) == pytest.approx(1.0)
        assert mean_rhs(1.0, p) == pytest.approx(0.0, abs=1e-15)

    def test_degenerate_dynamics_rejected(self):
        p = ModelParams(1.0, 0.0, 0.3, 0.3)
        with pytest.raises(ValueError):
            equilibrium_mu(p)

    @given(p=PARAMS)
    @settings(max_examples=200, deadline=None)
    def test_equilibrium_is_a_root_in_unit_interval(self, p):
        try:
            root = equilibrium_mu(p)
        except ValueError:
            return
        assert 0.0 <= root <= 1.0
        assert mean_rhs(root, p) == pytest.approx(0.0, abs=1e-9)


class TestNtMeanConstraint:
    def test_equal_rates_is_pure_exponential(self):
        rng = np.random.default_rng(3)
        times = np.linspace(0.0, 24.0, 13)
        for _ in range(100):
            lam = rng.uniform(0.05, LAMBDA_MAX)
            means = rng.uniform(0.0, 1.0, times.size)
            path = nt_mean_constraint(1000.0, times, means, lam, lam)
            assert np.array_equal(path, 1000.0 * np.exp(lam * times))

    def test_constant_mean_closed_form(self):
        times = np.linspace(0.0, 10.0, 31)
        path = nt_mean_constraint(500.0, times, np.full(31, 0.5), 0.6, 0.2)
        expected = 500.0 * np.exp(0.5 * (0.6 + 0.2) * times)
        assert np.allclose(path, expected, rtol=1e-12)

    def test_zero_mean_hand_value(self):
        path = nt_mean_constraint(1000.0, [0.0, 2.0], [0.0, 0.0], 0.6, 0.5)
        assert path[1] == pytest.approx(1000.0 * math.e)

    def test_thirds_refinement_equal_rates_exact(self):
        rng = np.random.default_rng(4)
        times = np.linspace(0.0, 24.0, 13)
        for _ in range(100):
            lam = rng.uniform(0.05, LAMBDA_MAX)
            means = rng.uniform(0.0, 1.0, times.size)
            m_mis = rng.uniform(0.0, 1.0, 2 * 12)
            path = nt_mean_constraint_thirds(1000.0, times, means, m_mis,
                                             lam, lam)
            refined = np.linspace(0.0, 24.0, 37)
            assert np.allclose(path, 1000.0 * np.exp(lam * refined),
                               rtol=1e-13)

    def test_thirds_subgrid_uses_direct_chord(self):
        # the two-thirds point integrates (m_k + m*)/2 over the whole 2*dt
        # span from t_k, not two stacked sub-trapezoids
        times = np.array([0.0, 2.0])
        means = np.array([0.2, 0.8])
        m_mis = np.array([0.9, 0.4])
        l1, l2 = 0.5, 0.2
        path = nt_mean_constraint_thirds(100.0, times, means, m_mis, l1, l2)
        t_sub = 4.0 / 3.0
        expected = 100.0 * math.exp(
            (l1 - l2) * 0.5 * (0.2 + 0.4) * t_sub + l2 * t_sub)
        assert path[2] == pytest.approx(expected, rel=1e-14)


class TestNtVarConstraint:
    def test_zero_numerator(self, ref_params):
        p = ref_params
        mu = (p.lambda2 * (1.0 - 2.0 * p.beta)
              / (2.0 * p.lambda1 * p.alpha - 2.0 * p.lambda2 * p.beta
                 + p.lambda2 - p.lambda1))
        assert nt_var_constraint(mu, 0.01, p) == pytest.approx(0.0, abs=1e-10)

    def test_hand_evaluation(self, ref_params):
        # (0.39 - 0.3) / (2 (-0.1) 0.001) = -450: diagnostic can go negative
        assert nt_var_constraint(0.5, 0.001, ref_params) == pytest.approx(-450.0)

    def test_inverse_homogeneity_in_variance(self, ref_params):
        one = nt_var_constraint(0.3, 0.004, ref_params)
        two = nt_var_constraint(0.3, 0.008, ref_params)
        assert two == pytest.approx(one / 2.0)

    def test_equal_rates_rejected(self):
        p = ModelParams(0.5, 0.5, 0.3, 0.3)
        with pytest.raises(ValueError):
            nt_var_constraint(0.5, 0.01, p)
        with pytest.raises(ValueError):
            nt_var_constraint(0.5, 0.0, ModelParams(0.5, 0.5, 0.3, 0.2))


class TestImprovedEuler:
    def test_zero_step_is_identity(self, ref_params):
        step = improved_euler_step(0.4, 0.002, 1000.0, 1100.0, 0.0,
                                   ref_params)
        assert (step.a, step.sigma) == (0.4, 0.002)

    def test_boundary_hand_expansion(self):
        p = ModelParams(0.7, 0.0, 0.4, 0.3)
        dt, big_n = 2.0 / 3.0, 2000.0
        step = improved_euler_step(0.0, 0.0, big_n, big_n, dt, p)
        ga = 2.0 * p.lambda1 * p.alpha - (p.lambda1 + p.lambda2)
        expected = (dt * p.lambda2 / (2 * big_n)
                    + dt * dt * ga * p.lambda2 / (4 * big_n))
        assert step.a == 0.0
        assert step.sigma == pytest.approx(expected, rel=1e-14)

    def test_negative_sigma_is_flagged_not_raised(self):
        # strongly mismatched rates over the raw two-day spacing push the
        # corrector past zero; the flag signals it instead of raising
        p = ModelParams(0.0, 1.0, 0.69, 0.01)
        step = improved_euler_step(1.0, 0.05, 1e6, 1e6, 2.0, p)
        assert not step.valid
        assert step.sigma < 0.0

    def test_local_third_order(self, ref_params):
        state = (0.35, 0.004, 900.0)
        errs = []
        for dt in (0.4, 0.2, 0.1):
            ref = rk4_solve(ref_params, state[0], state[1], state[2],
                            [0.0, dt], max_step=1e-4)
            n_end = ref.nt[-1]
            step = improved_euler_step(state[0], state[1], state[2], n_end,
                                       dt, ref_params)
            errs.append(abs(step.a - ref.mu[-1]))
        for first, second in zip(errs, errs[1:]):
            assert 6.0 < first / second < 10.5

    def test_global_second_order(self):
        rng = np.random.default_rng(11)
        grid_end = 24.0
        for _ in range(10):
            p = ModelParams(rng.uniform(), rng.uniform(),
                            rng.uniform(0.05, 0.6), rng.uniform(0.05, 0.6))
            mu0 = rng.uniform(0.1, 0.9)
            s20 = rng.uniform(0.0, 0.005)
            errs = []
            for dt in (1.0 / 6.0, 1.0 / 12.0):
                grid = np.arange(0.0, grid_end + 1e-12, dt)
                ref = rk4_solve(p, mu0, s20, 1000.0, grid, max_step=5e-4)
                mu, s2 = mu0, s20
                for k in range(grid.size - 1):
                    step = improved_euler_step(mu, s2, ref.nt[k],
                                               ref.nt[k + 1], dt, p)
                    mu, s2 = step.a, step.sigma
                errs.append(abs(mu - ref.mu[-1]) + abs(s2 - ref.sigma2[-1]))
            assert 3.5 < errs[0] / errs[1] < 4.5

    def test_step_map_wrapper(self, ref_params):
        sm = StepMap(ref_params, dt=0.5)
        direct = improved_euler_step(0.3, 0.002, 800.0, 900.0, 0.5,
                                     ref_params)
        assert sm(0.3, 0.002, 800.0, 900.0) == direct
        assert sm.a(0.3) == pytest.approx(direct.a)
        assert sm.sigma_step(0.3, 0.002, 800.0, 900.0) == direct.sigma
        with pytest.raises(ValueError):
            StepMap(ref_params, dt=0.0)


class TestRk4:
    def test_absorbing_boundary(self):
        p = ModelParams(0.7, 0.0, 0.4, 0.3)
        path = rk4_solve(p, 0.0, 0.0, 500.0, np.linspace(0, 24, 13))
        assert np.all(path.mu == 0.0)

    def test_equal_rates_closed_form(self):
        p = ModelParams(0.6, 0.3, 0.3, 0.3)
        lam, decay = 0.3, 0.3 * (1.0 + 0.3 - 0.6)
        star = 0.3 / (1.0 + 0.3 - 0.6)
        grid = np.linspace(0.0, 24.0, 25)
        path = rk4_solve(p, 0.1, 0.0, 1000.0, grid)
        expected = star + (0.1 - star) * np.exp(-decay * grid)
        assert np.max(np.abs(path.mu - expected)) < 1e-8
        assert np.allclose(path.nt, 1000.0 * np.exp(lam * grid), rtol=1e-8)

    def test_step_halving_converged(self, ref_params):
        grid = np.linspace(0.0, 24.0, 13)
        coarse = rk4_solve(ref_params, 0.4, 0.002, 1000.0, grid,
                           max_step=1e-3)
        fine = rk4_solve(ref_params, 0.4, 0.002, 1000.0, grid, max_step=5e-4)
        assert np.max(np.abs(coarse.mu - fine.mu)) < 1e-10
        assert np.max(np.abs(coarse.sigma2 - fine.sigma2)) < 1e-10

    def test_against_scipy_reference(self, ref_params):
        from scipy.integrate import solve_ivp

        p = ref_params

        def rhs(_, y):
            mu, s2, nt = y
            return [mean_rhs(mu, p), var_rhs(mu, s2, nt, p),
                    ((p.lambda1 - p.lambda2) * mu + p.lambda2) * nt]

        grid = np.linspace(0.0, 12.0, 7)
        ours = rk4_solve(p, 0.3, 0.001, 1000.0, grid)
        ref = solve_ivp(rhs, (0.0, 12.0), [0.3, 0.001, 1000.0],
                        t_eval=grid, rtol=1e-11, atol=1e-14)
        assert np.allclose(ours.mu, ref.y[0], atol=1e-8)
        assert np.allclose(ours.sigma2, ref.y[1], atol=1e-8)

    def test_moment_path_states(self, ref_params):
        path = rk4_solve(ref_params, 0.4, 0.001, 1000.0, [0.0, 1.0, 2.0])
        assert len(path) == 3
        state = path.state(2)
        assert state.t == 2.0 and 0.0 <= state.mu <= 1.0


def test_mean_constraint_tracks_simulator_better_than_var_constraint():
    # ten trials; the mean-consistency population path must beat the
    # variance-consistency one in at least eight
    rng = np.random.default_rng(21)
    grid = np.linspace(1.0, 8.0, 8)
    wins = 0
    for trial in range(10):
        while True:
            l1, l2 = rng.uniform(0.15, 0.45, 2)
            if abs(l1 - l2) > 0.03:
                break
        p = ModelParams(rng.uniform(0.2, 0.9), rng.uniform(0.1, 0.9), l1, l2)
        cfg = SimConfig(n0=150, mu0=rng.uniform(0.2, 0.8), t_end=8.0,
                        record_grid=grid, replicates=20, seed=1000 + trial)
        runs = simulate_replicates(cfg, p)
        r = np.stack([prop for prop, _ in runs])
        totals = np.stack([tot for _, tot in runs])
        n_avg = totals.mean(axis=0)
        m_t = r.mean(axis=0)
        v_t = r.var(axis=0, ddof=1)
        full_times = np.concatenate(([0.0], grid))
        x0 = int(np.floor(cfg.mu0 * cfg.n0 + 0.5))
        full_means = np.concatenate(([x0 / cfg.n0], m_t))
        n_mean = nt_mean_constraint(cfg.n0, full_times, full_means,
                                    p.lambda1, p.lambda2)[1:]
        n_var = np.array([nt_var_constraint(m_t[j], max(v_t[j], 1e-12), p)
                          for j in range(grid.size)])
        err_mean = np.max(np.abs(n_mean - n_avg) / n_avg)
        err_var = np.max(np.abs(n_var - n_avg) / n_avg)
        wins += err_mean < err_var
    assert wins >= 8
