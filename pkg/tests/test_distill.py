import numpy as np
import pytest

import scorelab as sl
from scorelab.core import Condition, CountingDenoiser, GuidanceConfig, Latent
from scorelab.distill import (
    DBCSchedule,
    DistillConfig,
    DistillParams,
    dbc_weights,
    ge3d_iteration,
    init_particles,
    ism_gradient,
    run_distillation,
    sds_gradient,
    verify_ism_identity,
    verify_sds_identity,
)
from scorelab.errors import ParameterError
from scorelab.lab import presets
from scorelab.trajectory import TimestepTrajectory


class TestDBC:
    def test_delta_endpoints_exact(self):
        dbc = DBCSchedule.make(3000, 6, 1000.0)
        assert dbc.Delta[0] == 3000.0
        assert dbc.Delta[5] == 0.0

    def test_delta_equal_intervals_strictly_decreasing(self):
        dbc = DBCSchedule.make(3000, 6, 1000.0)
        np.testing.assert_allclose(dbc.Delta, [3000, 2400, 1800, 1200, 600, 0])
        assert np.all(np.diff(dbc.Delta) < 0)

    def test_single_step_degenerates_to_unit_weight(self):
        dbc = DBCSchedule.make(100, 1, 50.0)
        np.testing.assert_array_equal(dbc.Delta, [0.0])
        np.testing.assert_array_equal(dbc_weights(7, dbc), [1.0])

    def test_peak_at_matching_iteration(self):
        dbc = DBCSchedule.make(3000, 6, 1000.0)
        for i, delta in enumerate(dbc.Delta):
            k = int(delta) if delta < 3000 else 2999
            w = dbc_weights(k, dbc)
            if delta < 3000:
                assert int(np.argmax(w)) == i

    def test_normalization_sweep(self):
        dbc = DBCSchedule.make(3000, 6, 1000.0)
        for k in range(0, 3000, 7):
            assert abs(float(dbc_weights(k, dbc).sum()) - 1.0) <= 1e-12

    def test_two_step_constants(self):
        # K=3000, sigma=1000, k=0: unnormalized [exp(-4.5), 1]
        dbc = DBCSchedule.make(3000, 2, 1000.0)
        w = dbc_weights(0, dbc)
        e = np.exp(-4.5)
        np.testing.assert_allclose(w, [e / (1 + e), 1 / (1 + e)], rtol=1e-12)
        np.testing.assert_allclose(w, [0.01098, 0.98902], atol=1e-5)

    def test_argmax_handoff_default_config(self):
        dbc = DBCSchedule.make(3000, 6, 1000.0)
        args = [int(np.argmax(dbc_weights(k, dbc))) for k in range(3000)]
        assert args[0] == 5 and args[-1] == 0
        assert all(b <= a for a, b in zip(args[:-1], args[1:]))

    def test_iteration_out_of_range(self):
        dbc = DBCSchedule.make(100, 3, 30.0)
        for k in (-1, 100):
            with pytest.raises(ParameterError):
                dbc_weights(k, dbc)


class TestSdsGradient:
    def test_zero_when_denoiser_matches_noise(self, sched, const_den):
        eps = np.array([0.4, -0.9])
        den = const_den(eps)
        g = sds_gradient(np.array([1.0, 1.0]), 300, den, den.class_condition(0),
                         GuidanceConfig(7.5), eps, sched)
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_zero_weighting(self, sched, single_oracle_den):
        den = single_oracle_den
        g = sds_gradient(np.array([1.0, 1.0]), 300, den, den.class_condition(0),
                         GuidanceConfig(1.0), np.array([0.3, 0.3]), sched, f_t=0.0)
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_monte_carlo_pull_toward_data_mean(self, single_oracle_den, sched):
        # descent direction -g should align with (mu - x0) nearly always
        mu = np.array([1.5, -0.5])
        x0 = mu + np.array([5.0, 0.0])
        rng = np.random.default_rng(101)
        cond = single_oracle_den.class_condition(0)
        hits = 0
        for _ in range(1000):
            t = int(rng.integers(200, 901))
            eps = rng.standard_normal(2)
            g = sds_gradient(x0, t, single_oracle_den, cond, GuidanceConfig(1.0),
                             eps, sched)
            hits += float(np.dot(-g, mu - x0)) > 0
        assert hits >= 950


class TestIsmGradient:
    def test_zero_for_constant_denoiser_without_guidance(self, sched, const_den):
        den = const_den(np.array([0.2, 0.8]))
        g = ism_gradient(np.array([1.0, -1.0]), 100, 200, den,
                         den.class_condition(0), GuidanceConfig(0.0), sched)
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_deterministic(self, sched, oracle_den):
        args = (np.array([0.5, 0.5]), 150, 260, oracle_den,
                oracle_den.class_condition(0), GuidanceConfig(7.5), sched)
        np.testing.assert_array_equal(ism_gradient(*args), ism_gradient(*args))

    def test_invalid_interval(self, sched, oracle_den):
        with pytest.raises(ParameterError):
            ism_gradient(np.zeros(2), 200, 200, oracle_den,
                         oracle_den.class_condition(0), GuidanceConfig(1.0), sched)

    def test_call_counts(self, sched, random_net):
        cond = random_net.class_condition(0)
        g = GuidanceConfig(7.5)
        counting = CountingDenoiser(random_net)
        ism_gradient(np.zeros(2), 0, 150, counting, cond, g, sched)
        assert counting.calls == 3
        counting = CountingDenoiser(random_net)
        ism_gradient(np.zeros(2), 90, 150, counting, cond, g, sched)
        assert counting.calls == 4


class TestGe3dIteration:
    def _iterate(self, theta, traj, den, cond, scale, sched, k=0, K=100, **kw):
        dbc = DBCSchedule.make(K, traj.n, K / 3.0)
        return ge3d_iteration(
            DistillParams(theta, k), traj, den, cond, GuidanceConfig(scale),
            dbc, sched, particle_index=0, **kw,
        )

    def test_oracle_fixed_point_zero_gradient(self, single_oracle_den, sched):
        mu = np.array([1.5, -0.5])
        traj = sl.build_timestep_trajectory(6, 60, 80, seed=12, T=1000)
        report = self._iterate(mu[None, :], traj, single_oracle_den,
                               single_oracle_den.null_condition(), 0.0, sched)
        assert float(np.linalg.norm(report.total)) <= 1e-6

    def test_single_step_matches_ism_residual(self, sched, random_net):
        # one-step trajectories reduce to the inversion-residual method up
        # to the positive factor sqrt(ab_0) * delta
        for t1 in (60, 240, 700):
            traj = TimestepTrajectory((0, t1))
            cond = random_net.class_condition(1)
            theta = np.array([[0.7, -0.3]])
            report = self._iterate(theta, traj, random_net, cond, 7.5, sched)
            ism = ism_gradient(theta[0], 0, t1, random_net, cond,
                               GuidanceConfig(7.5), sched)
            delta = sl.ddim_delta(0, t1, sched)
            np.testing.assert_allclose(report.total, delta * ism, rtol=1e-9)
            cos = np.dot(report.total, ism) / (
                np.linalg.norm(report.total) * np.linalg.norm(ism)
            )
            assert abs(cos - 1.0) <= 1e-9

    def test_weights_match_schedule_exactly(self, sched, oracle_den):
        traj = sl.build_timestep_trajectory(6, 60, 80, seed=13, T=1000)
        dbc = DBCSchedule.make(500, 6, 200.0)
        report = ge3d_iteration(
            DistillParams(np.zeros((1, 2)), 123), traj, oracle_den,
            oracle_den.class_condition(0), GuidanceConfig(7.5), dbc, sched,
            particle_index=0,
        )
        np.testing.assert_array_equal(report.weights, dbc_weights(123, dbc))

    def test_total_is_weighted_residual_sum(self, sched, oracle_den):
        traj = sl.build_timestep_trajectory(5, 60, 80, seed=14, T=1000)
        report = self._iterate(np.array([[0.4, 0.4]]), traj, oracle_den,
                               oracle_den.class_condition(0), 7.5, sched, k=50)
        recomputed = sum(w * r for w, r in zip(report.weights, report.residuals))
        assert float(np.abs(report.total - recomputed).max()) <= 1e-12

    def test_call_count_3n(self, sched, oracle_den):
        for n in (1, 4, 6):
            traj = sl.build_timestep_trajectory(n, 50, 70, seed=n, T=1000)
            report = self._iterate(np.array([[0.2, 0.2]]), traj, oracle_den,
                                   oracle_den.class_condition(0), 7.5, sched)
            assert report.denoiser_calls == 3 * n

    def test_uniform_weights_flag(self, sched, oracle_den):
        traj = sl.build_timestep_trajectory(4, 50, 70, seed=15, T=1000)
        report = self._iterate(np.array([[0.2, 0.2]]), traj, oracle_den,
                               oracle_den.class_condition(0), 7.5, sched,
                               uniform_weights=True)
        np.testing.assert_array_equal(report.weights, np.full(4, 0.25))

    def test_schedule_length_mismatch_rejected(self, sched, oracle_den):
        traj = sl.build_timestep_trajectory(4, 50, 70, seed=16, T=1000)
        dbc = DBCSchedule.make(100, 6, 30.0)
        with pytest.raises(ParameterError):
            ge3d_iteration(DistillParams(np.zeros((1, 2)), 0), traj, oracle_den,
                           oracle_den.class_condition(0), GuidanceConfig(7.5),
                           dbc, sched, particle_index=0)

    def test_eps_units_scaling(self, sched, oracle_den):
        traj = sl.build_timestep_trajectory(3, 60, 80, seed=17, T=1000)
        plain = self._iterate(np.array([[0.5, 0.1]]), traj, oracle_den,
                              oracle_den.class_condition(0), 7.5, sched)
        scaled = self._iterate(np.array([[0.5, 0.1]]), traj, oracle_den,
                               oracle_den.class_condition(0), 7.5, sched,
                               residual_scaling="eps_units")
        for i, (r, s) in enumerate(zip(plain.residuals, scaled.residuals)):
            t_lo, t_hi = traj.nodes[i], traj.nodes[i + 1]
            factor = np.sqrt(sched.alpha_bar[t_lo]) * sl.ddim_delta(t_lo, t_hi, sched)
            np.testing.assert_allclose(s, r / factor, rtol=1e-12)


class TestIdentities:
    def test_sds_identity_sweep(self, sched, random_net):
        rng = np.random.default_rng(55)
        for _ in range(100):
            x0 = 4.0 * rng.standard_normal(2)
            eps = rng.standard_normal(2)
            t = int(rng.integers(1, 1001))
            g = GuidanceConfig(float(rng.uniform(0, 10)))
            cond = random_net.class_condition(int(rng.integers(0, 2)))
            assert verify_sds_identity(x0, t, eps, random_net, cond, g, sched) <= 1e-9

    def test_sds_identity_zero_when_denoiser_returns_noise(self, sched, const_den):
        eps = np.array([0.6, -0.1])
        den = const_den(eps)
        res = verify_sds_identity(np.array([2.0, 1.0]), 500, eps, den,
                                  den.class_condition(0), GuidanceConfig(3.0), sched)
        assert res <= 1e-12

    def test_ism_identity_sweep(self, sched, random_net):
        rng = np.random.default_rng(56)
        for _ in range(100):
            x0 = 4.0 * rng.standard_normal(2)
            s = int(rng.integers(0, 1000))
            t = int(rng.integers(s + 1, 1001))
            g = GuidanceConfig(float(rng.uniform(0, 10)))
            cond = random_net.class_condition(int(rng.integers(0, 2)))
            assert verify_ism_identity(x0, s, t, random_net, cond, g, sched) <= 1e-9

    def test_ism_identity_zero_for_constant_denoiser(self, sched, const_den):
        den = const_den(np.array([0.3, 0.3]))
        res = verify_ism_identity(np.array([1.0, -1.0]), 100, 300, den,
                                  den.class_condition(0), GuidanceConfig(0.0), sched)
        assert res <= 1e-12

    def test_ism_identity_scale_invariant_for_linear_oracle(self, sched):
        # mu = 0 makes the posterior map linear in x
        ds = sl.ToyDataset((sl.ClassMixture([[0.0, 0.0]], 1.0, [1.0]),))
        den = sl.OracleDenoiser(ds, sched)
        cond = den.class_condition(0)
        g = GuidanceConfig(0.0)
        x0 = np.array([0.9, -0.4])
        r1 = verify_ism_identity(x0, 120, 240, den, cond, g, sched)
        r2 = verify_ism_identity(2.0 * x0, 120, 240, den, cond, g, sched)
        assert r1 <= 1e-9 and r2 <= 1e-9


class FlakyDenoiser:
    """Returns valid predictions until a call budget, then NaN."""

    def __init__(self, inner, break_after):
        self.inner = inner
        self.break_after = break_after
        self.calls = 0

    def predict(self, x, t, cond):
        self.calls += 1
        if self.calls > self.break_after:
            return np.full_like(np.asarray(x, dtype=float), np.nan)
        return self.inner.predict(x, t, cond)

    def null_condition(self):
        return self.inner.null_condition()

    def class_condition(self, label):
        return self.inner.class_condition(label)


class TestRunDistillation:
    def test_zero_iterations(self, two_mode_ds, sched, oracle_den):
        cfg = DistillConfig(method="ge3d", iterations=0, seed=3, particles=4,
                            eval_samples=64, eval_projections=8)
        h = run_distillation("ge3d", cfg, two_mode_ds, sched, oracle_den)
        assert h.records == [] and h.snapshots == []
        init = init_particles(cfg, 2, np.random.default_rng(3))
        np.testing.assert_array_equal(h.theta_final, init)

    def test_bit_identical_reruns(self, two_mode_ds, sched, oracle_den):
        cfg = DistillConfig(method="ge3d", iterations=30, seed=5, particles=4,
                            eval_samples=64, eval_projections=8)
        a = run_distillation("ge3d", cfg, two_mode_ds, sched, oracle_den)
        b = run_distillation("ge3d", cfg, two_mode_ds, sched, oracle_den)
        np.testing.assert_array_equal(a.theta_final, b.theta_final)
        assert a.records == b.records
        assert a.snapshots == b.snapshots

    def test_call_budget_arithmetic(self, two_mode_ds, sched, oracle_den):
        for method, per_iter in (("ge3d", 18), ("sds", 2), ("ism", 4)):
            cfg = DistillConfig(method=method, iterations=25, seed=1, particles=4,
                                eval_samples=64, eval_projections=8)
            h = run_distillation(method, cfg, two_mode_ds, sched, oracle_den)
            assert h.total_calls == 25 * per_iter
            assert cfg.calls_per_iteration() == per_iter if method != "ge3d" else True

    def test_budget_caps_iterations(self, two_mode_ds, sched, oracle_den):
        cfg = DistillConfig(method="ge3d", iterations=1000, seed=1, particles=4,
                            max_calls=180, eval_samples=64, eval_projections=8)
        h = run_distillation("ge3d", cfg, two_mode_ds, sched, oracle_den)
        assert h.iterations_run == 10
        assert h.total_calls == 180

    def test_numeric_failure_flags_partial_history(self, two_mode_ds, sched, oracle_den):
        flaky = FlakyDenoiser(oracle_den, break_after=90)
        cfg = DistillConfig(method="ge3d", iterations=50, seed=2, particles=4,
                            eval_samples=64, eval_projections=8)
        h = run_distillation("ge3d", cfg, two_mode_ds, sched, flaky)
        assert h.failed
        assert 0 < h.iterations_run < 50
        assert h.failure_message

    def test_unknown_method_rejected(self, two_mode_ds, sched, oracle_den):
        cfg = DistillConfig(iterations=1)
        with pytest.raises(ParameterError):
            run_distillation("vsd", cfg, two_mode_ds, sched, oracle_den)


class TestBenchmarkRegression:
    def test_reference_run_final_metric(self, two_mode_ds, sched, oracle_den):
        import time

        cfg = presets.benchmark_distill(seed=0)
        start = time.monotonic()
        h = run_distillation("ge3d", cfg, two_mode_ds, sched, oracle_den)
        elapsed = time.monotonic() - start
        assert h.total_calls == 36000
        assert h.final_metric() <= presets.REFERENCE_GE3D_FINAL_SW * 1.05
        assert elapsed < 600.0  # the full preset is a seconds-scale CPU run

    def test_mode_coverage_pair(self, two_mode_ds, sched, oracle_den):
        from scorelab.metrics import mode_coverage

        centers = two_mode_ds.mode_centers(0)
        radius = 0.25 * two_mode_ds.mode_separation(0)
        h_g = run_distillation(
            "ge3d", presets.mean_collapse_ge3d(0), two_mode_ds, sched, oracle_den
        )
        h_s = run_distillation(
            "sds", presets.mean_collapse_sds(0), two_mode_ds, sched, oracle_den
        )
        cov_g, _ = mode_coverage(h_g.theta_final, centers, radius)
        cov_s, _ = mode_coverage(h_s.theta_final, centers, radius)
        assert cov_g >= 2
        assert cov_s <= 1
