import numpy as np
import pytest

import scorelab as sl
from scorelab.core import NoiseSchedule
from scorelab.errors import ParameterError


def brute_force_alpha_bar(T, beta_start, beta_end):
    """Independent product oracle: plain Python term-by-term multiply."""
    betas = [beta_start + (beta_end - beta_start) * i / (T - 1) for i in range(T)]
    prod = 1.0
    out = [1.0]
    for b in betas:
        prod *= 1.0 - b
        out.append(prod)
    return out


class TestBuildSchedule:
    def test_alpha_bar_zero_is_one(self, sched):
        assert sched.alpha_bar[0] == 1.0

    def test_single_step_product(self):
        s = sl.build_schedule(1, 0.5, 0.5)
        assert s.alpha_bar[1] == 0.5

    def test_full_product_against_brute_force(self, sched):
        oracle = brute_force_alpha_bar(1000, 1e-4, 0.02)
        got = sched.alpha_bar[1000]
        assert abs(got - oracle[1000]) / oracle[1000] <= 1e-12

    def test_product_invariant_everywhere(self, sched):
        oracle = brute_force_alpha_bar(1000, 1e-4, 0.02)
        rel = np.abs(sched.alpha_bar - np.array(oracle)) / np.array(oracle)
        assert rel.max() <= 1e-12

    def test_monotone_decreasing_in_unit_interval(self, sched):
        assert np.all(np.diff(sched.alpha_bar) < 0)
        assert np.all(sched.alpha_bar > 0) and np.all(sched.alpha_bar <= 1)

    @pytest.mark.parametrize(
        "args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 0.5, 1.0)]
    )
    def test_invalid_parameters(self, args):
        with pytest.raises(ParameterError):
            sl.build_schedule(*args)


class TestQSample:
    def test_zero_noise_scaling(self, sched):
        x0 = sl.Latent(np.array([1.0, -2.0]), 0)
        out = sl.q_sample(x0, 400, np.zeros(2), sched)
        np.testing.assert_allclose(
            out.value, np.sqrt(sched.alpha_bar[400]) * x0.value, rtol=1e-15
        )

    def test_zero_signal_linearity(self, sched):
        eps = np.array([0.7, -0.3])
        out = sl.q_sample(sl.Latent(np.zeros(2), 0), 250, eps, sched)
        np.testing.assert_allclose(
            out.value, np.sqrt(1 - sched.alpha_bar[250]) * eps, rtol=1e-15
        )

    def test_forced_example_quarter_alpha_bar(self):
        # betas (0.5, 0.5) give alpha_bar[2] = 0.25 exactly
        s = NoiseSchedule.from_betas(np.array([0.5, 0.5]))
        out = sl.q_sample(sl.Latent(np.array([1.0, 1.0]), 0), 2, np.zeros(2), s)
        np.testing.assert_array_equal(out.value, [0.5, 0.5])

    def test_out_of_range_t(self, sched):
        x0 = sl.Latent(np.zeros(2), 0)
        for t in (0, 1001):
            with pytest.raises(ParameterError):
                sl.q_sample(x0, t, np.zeros(2), sched)

    def test_dimension_mismatch(self, sched):
        with pytest.raises(ParameterError):
            sl.q_sample(sl.Latent(np.zeros(2), 0), 5, np.zeros(3), sched)

    def test_nonzero_input_timestep_rejected(self, sched):
        with pytest.raises(ParameterError):
            sl.q_sample(sl.Latent(np.zeros(2), 3), 5, np.zeros(2), sched)


class TestCfgCombine:
    def test_zero_scale_is_unconditional(self):
        u, c = np.array([0.3, -0.4]), np.array([1.2, 2.2])
        np.testing.assert_array_equal(sl.cfg_combine(u, c, sl.GuidanceConfig(0.0)), u)

    def test_unit_scale_is_conditional(self):
        u, c = np.array([0.3, -0.4]), np.array([1.2, 2.2])
        np.testing.assert_array_equal(sl.cfg_combine(u, c, sl.GuidanceConfig(1.0)), c)

    def test_direct_substitution(self):
        out = sl.cfg_combine(np.zeros(2), np.array([1.0, 2.0]), sl.GuidanceConfig(7.5))
        np.testing.assert_array_equal(out, [7.5, 15.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            sl.cfg_combine(np.zeros(2), np.zeros(3), sl.GuidanceConfig(1.0))

    def test_affine_in_scale(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            u, c = rng.standard_normal(3), rng.standard_normal(3)
            l1, l2 = rng.uniform(0, 8, 2)
            lhs = sl.cfg_combine(u, c, sl.GuidanceConfig(l1)) + sl.cfg_combine(
                u, c, sl.GuidanceConfig(l2)
            )
            rhs = sl.cfg_combine(u, c, sl.GuidanceConfig(l1 + l2)) + u
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_negative_scale_rejected(self):
        with pytest.raises(ParameterError):
            sl.GuidanceConfig(-0.5)


class TestDdimStep:
    def test_identity_transition(self, sched):
        x = sl.Latent(np.array([0.4, -1.3]), 300)
        out = sl.ddim_step(x, 300, np.array([9.9, 9.9]), sched)
        np.testing.assert_array_equal(out.value, x.value)

    def test_step_to_zero_is_predicted_clean_point(self, sched):
        rng = np.random.default_rng(1)
        x = sl.Latent(rng.standard_normal(2), 600)
        eps_hat = rng.standard_normal(2)
        ab = sched.alpha_bar[600]
        expected = (x.value - np.sqrt(1 - ab) * eps_hat) / np.sqrt(ab)
        np.testing.assert_allclose(
            sl.ddim_step(x, 0, eps_hat, sched).value, expected, rtol=1e-14
        )

    def test_round_trip_shared_eps(self, sched):
        rng = np.random.default_rng(2)
        for _ in range(200):
            m, k = rng.integers(0, 1001, 2)
            x = sl.Latent(4.0 * rng.standard_normal(2), int(m))
            eps_hat = rng.standard_normal(2)
            mid = sl.ddim_step(x, int(k), eps_hat, sched)
            back = sl.ddim_step(mid, int(m), eps_hat, sched)
            scale = max(np.abs(x.value).max(), 1.0)
            assert np.abs(back.value - x.value).max() / scale <= 1e-10

    def test_rescaled_form_equivalence(self, sched):
        rng = np.random.default_rng(3)
        for _ in range(200):
            m, k = rng.integers(0, 1001, 2)
            m, k = int(m), int(k)
            if m == k:
                continue
            x = sl.Latent(4.0 * rng.standard_normal(2), m)
            eps_hat = rng.standard_normal(2)
            sign = 1.0 if k > m else -1.0
            delta = sl.ddim_delta(min(m, k), max(m, k), sched)
            rescaled = np.sqrt(sched.alpha_bar[k]) * (
                x.value / np.sqrt(sched.alpha_bar[m]) + sign * delta * eps_hat
            )
            stepped = sl.ddim_step(x, k, eps_hat, sched).value
            scale = max(np.abs(stepped).max(), 1.0)
            assert np.abs(stepped - rescaled).max() / scale <= 1e-10

    def test_noising_then_true_eps_inverts(self, sched):
        rng = np.random.default_rng(4)
        for _ in range(200):
            x0 = sl.Latent(4.0 * rng.standard_normal(2), 0)
            t = int(rng.integers(1, 1001))
            eps = rng.standard_normal(2)
            x_t = sl.q_sample(x0, t, eps, sched)
            back = sl.ddim_step(x_t, 0, eps, sched)
            scale = max(np.abs(x0.value).max(), 1.0)
            assert np.abs(back.value - x0.value).max() / scale <= 1e-10


class TestDdimDelta:
    def test_from_zero(self, sched):
        ab = sched.alpha_bar[500]
        assert sl.ddim_delta(0, 500, sched) == pytest.approx(
            np.sqrt((1 - ab) / ab), rel=1e-15
        )

    def test_forced_values(self):
        # betas (0.2, 0.375) give alpha_bar = [1, 0.8, 0.5]
        s = NoiseSchedule.from_betas(np.array([0.2, 0.375]))
        assert s.alpha_bar[1] == pytest.approx(0.8, rel=1e-15)
        assert s.alpha_bar[2] == pytest.approx(0.5, rel=1e-15)
        assert sl.ddim_delta(1, 2, s) == pytest.approx(0.5, rel=1e-12)

    def test_positive(self, sched):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a, b = sorted(rng.choice(1001, 2, replace=False))
            assert sl.ddim_delta(int(a), int(b), sched) > 0

    def test_telescoping_additivity(self, sched):
        rng = np.random.default_rng(6)
        for _ in range(300):
            a, b, c = sorted(rng.choice(1001, 3, replace=False))
            a, b, c = int(a), int(b), int(c)
            lhs = sl.ddim_delta(a, b, sched) + sl.ddim_delta(b, c, sched)
            assert abs(lhs - sl.ddim_delta(a, c, sched)) <= 1e-12

    def test_ordering_enforced(self, sched):
        for a, b in ((5, 5), (10, 5)):
            with pytest.raises(ParameterError):
                sl.ddim_delta(a, b, sched)
