import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerostate.errors import ValidationError
from aerostate.statespace import (
    Ar1Params,
    MeanStructure,
    ObservationNoise,
    ar1_logpdf,
    ffbs_sample,
    forward_filter,
    kalman_loglik,
    mean_at,
    simulate_ar1,
    smooth,
)


def mvn_pieces(y, n, ar, noise):
    """Joint-Gaussian mean/covariance of the observed series (oracle)."""
    T = len(y)
    mu = np.atleast_1d(mean_at(ar.mean, np.arange(1, T + 1)))
    idx = np.arange(T)
    cov_x = ar.stationary_variance * ar.phi ** np.abs(idx[:, None] - idx[None, :])
    cov_y = cov_x + np.diag(noise.variances(np.ones(T, dtype=int) if n is None else n))
    return mu, cov_x, cov_y


def mvn_loglik(y, n, ar, noise):
    mu, _, cov_y = mvn_pieces(y, n, ar, noise)
    e = np.asarray(y) - mu
    sign, logdet = np.linalg.slogdet(cov_y)
    return -0.5 * (len(y) * math.log(2 * math.pi) + logdet + e @ np.linalg.solve(cov_y, e))


def mvn_condition(y, n, ar, noise):
    mu, cov_x, cov_y = mvn_pieces(y, n, ar, noise)
    e = np.asarray(y) - mu
    mean = mu + cov_x @ np.linalg.solve(cov_y, e)
    var = np.diag(cov_x - cov_x @ np.linalg.solve(cov_y, cov_x))
    return mean, var


def random_instance(rng, T):
    kind = rng.choice(["constant", "harmonic", "warped"])
    if kind == "constant":
        mean = MeanStructure.constant(rng.normal(0, 3))
    elif kind == "harmonic":
        mean = MeanStructure.harmonic(rng.normal(0, 2), rng.normal(0, 10))
    else:
        mean = MeanStructure.warped(*rng.normal(0, 1, size=7))
    ar = Ar1Params(rng.uniform(-0.95, 0.95), rng.uniform(0.05, 3.0), mean)
    noise = ObservationNoise(rng.choice(["constant", "scaled_by_n"]), rng.uniform(0.05, 2.0))
    n = rng.integers(1, 8, size=T)
    y = rng.normal(0, 2, size=T)
    return y, n, ar, noise


class TestSeasonalMeans:
    def test_warp_collapses_to_plain_trig(self):
        # with zero shape parameters the warped pair is exactly cos/sin
        from aerostate.statespace import _warp_cos, _warp_sin

        t = np.linspace(-15, 15, 1000)
        np.testing.assert_allclose(_warp_cos(t, 0.0, 0.0), np.cos(t), atol=1e-12)
        np.testing.assert_allclose(_warp_sin(t, 0.0, 0.0), np.sin(t), atol=1e-12)

    def test_zero_amplitude_harmonic_is_flat(self):
        mean = MeanStructure.harmonic(0.0, 3.7)
        assert np.all(mean_at(mean, np.arange(1, 200)) == 0.0)

    def test_warped_with_zero_shape_matches_harmonic(self):
        a0, omega = 1.3, 4.2
        warped = MeanStructure.warped(a0, 0.0, omega, 0.0, 0.0, 0.0, 0.0)
        harmonic = MeanStructure.harmonic(a0, omega)
        t = np.arange(1, 400)
        np.testing.assert_allclose(mean_at(warped, t), mean_at(harmonic, t), atol=1e-12)

    @given(st.data())
    @settings(max_examples=250)
    def test_warped_matches_independent_formula(self, data):
        # re-evaluate the printed form from scratch at random points
        t = data.draw(st.floats(-100, 100))
        b = data.draw(st.floats(-3, 3))
        c = data.draw(st.floats(-3, 3))
        a0 = data.draw(st.floats(-2, 2))
        a1 = data.draw(st.floats(-2, 2))
        omega = data.draw(st.floats(-52, 52))
        mean = MeanStructure.warped(a0, a1, omega, b, c, b, c)
        angle = 2 * math.pi / 52 * (t + omega)
        g1 = math.sqrt((1 + b * b) / (1 + b * b * math.cos(angle) ** 2)) * math.cos(
            angle + c * math.cos(angle)
        )
        g2 = math.sqrt((1 + b * b) / (1 + b * b * math.sin(angle) ** 2)) * math.sin(
            angle + c * math.sin(angle)
        )
        expected = a0 * g1 + a1 * g2
        assert mean_at(mean, t) == pytest.approx(expected, abs=1e-12)

    def test_period_is_52_weeks(self):
        mean = MeanStructure.harmonic(2.0, 7.0)
        t = np.arange(1, 53)
        np.testing.assert_allclose(mean_at(mean, t), mean_at(mean, t + 52), atol=1e-12)


class TestKalman:
    def test_matches_mvn_oracle_100_instances(self):
        rng = np.random.default_rng(20)
        for _ in range(100):
            y, n, ar, noise = random_instance(rng, int(rng.integers(1, 11)))
            assert kalman_loglik(y, n, ar, noise) == pytest.approx(
                mvn_loglik(y, n, ar, noise), abs=1e-8
            )

    def test_iid_limit_phi_zero(self):
        rng = np.random.default_rng(21)
        y = rng.normal(1.5, 1.0, size=40)
        ar = Ar1Params(0.0, 0.8, MeanStructure.constant(1.5))
        ll = kalman_loglik(y, None, ar, ObservationNoise("constant", 1e-12))
        iid = np.sum(-0.5 * (np.log(2 * np.pi * 0.8) + (y - 1.5) ** 2 / 0.8))
        assert ll == pytest.approx(iid, abs=1e-6)

    def test_more_valid_days_shrinks_predictive_variance(self):
        rng = np.random.default_rng(22)
        y = rng.normal(0, 1, size=30)
        ar = Ar1Params(0.6, 0.4, MeanStructure.constant(0.0))
        noise = ObservationNoise("scaled_by_n", 1.0)
        n1 = np.full(30, 3)
        mu = [0.0] * 30
        _, _, fv1, _, pv1 = forward_filter(list(y), noise.variances(n1), mu, 0.6, 0.4)
        _, _, fv2, _, pv2 = forward_filter(list(y), noise.variances(2 * n1), mu, 0.6, 0.4)
        assert all(b < a for a, b in zip(fv1, fv2))
        assert all(b < a for a, b in zip(pv1[1:], pv2[1:]))

    def test_translation_equivariance(self):
        rng = np.random.default_rng(23)
        y = rng.normal(0, 1, size=50)
        noise = ObservationNoise("constant", 0.5)
        base = kalman_loglik(y, None, Ar1Params(0.7, 0.3, MeanStructure.constant(0.0)), noise)
        shifted = kalman_loglik(
            y + 11.5, None, Ar1Params(0.7, 0.3, MeanStructure.constant(11.5)), noise
        )
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_rejects_bad_inputs(self):
        ar = Ar1Params(0.5, 1.0, MeanStructure.constant(0.0))
        noise = ObservationNoise("constant", 1.0)
        with pytest.raises(ValidationError):
            kalman_loglik([1.0, float("nan")], None, ar, noise)
        with pytest.raises(ValidationError):
            Ar1Params(1.0, 1.0, MeanStructure.constant(0.0))


class TestSmoother:
    def test_matches_mvn_conditioning(self):
        rng = np.random.default_rng(24)
        for _ in range(50):
            y, n, ar, noise = random_instance(rng, int(rng.integers(2, 11)))
            sm, sv = smooth(y, n, ar, noise)
            m2, v2 = mvn_condition(y, n, ar, noise)
            np.testing.assert_allclose(sm, m2, atol=1e-8)
            np.testing.assert_allclose(sv, v2, atol=1e-8)

    def test_exact_observation_returns_data(self):
        rng = np.random.default_rng(25)
        y = rng.normal(2, 1, size=25)
        ar = Ar1Params(0.7, 0.5, MeanStructure.constant(2.0))
        sm, _ = smooth(y, None, ar, ObservationNoise("constant", 1e-12))
        np.testing.assert_allclose(sm, y, atol=1e-5)

    def test_uninformative_observation_returns_prior_mean(self):
        rng = np.random.default_rng(26)
        y = rng.normal(0, 1, size=25)
        mean = MeanStructure.harmonic(1.5, 3.0)
        ar = Ar1Params(0.7, 0.5, mean)
        sm, _ = smooth(y, None, ar, ObservationNoise("constant", 1e12))
        np.testing.assert_allclose(sm, mean_at(mean, np.arange(1, 26)), atol=1e-3)

    def test_posterior_variance_below_stationary(self):
        rng = np.random.default_rng(27)
        y, n, ar, noise = random_instance(rng, 10)
        _, sv = smooth(y, n, ar, noise)
        assert np.all(sv <= ar.stationary_variance + 1e-12)


class TestFfbs:
    def test_fixed_seed_reproducible(self):
        rng = np.random.default_rng(30)
        y, n, ar, noise = random_instance(rng, 15)
        a = ffbs_sample(y, n, ar, noise, np.random.default_rng(99))
        b = ffbs_sample(y, n, ar, noise, np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_exact_observation_returns_data(self):
        rng = np.random.default_rng(31)
        y = rng.normal(0, 1, size=20)
        ar = Ar1Params(0.6, 0.4, MeanStructure.constant(0.0))
        path = ffbs_sample(y, None, ar, ObservationNoise("constant", 1e-12), rng)
        np.testing.assert_allclose(path, y, atol=1e-4)

    def test_moments_match_smoother(self):
        # 20k draws against exact smoother moments, 4 Monte-Carlo SEs
        rng = np.random.default_rng(32)
        ar = Ar1Params(0.8, 0.5, MeanStructure.constant(1.0))
        noise = ObservationNoise("constant", 0.7)
        sim = simulate_ar1(ar, noise, 1, 4, rng)
        y = sim.log_observed
        draws = np.array([ffbs_sample(y, None, ar, noise, rng) for _ in range(20000)])
        sm, sv = smooth(y, None, ar, noise)
        z_mean = (draws.mean(axis=0) - sm) / np.sqrt(sv / draws.shape[0])
        z_var = (draws.var(axis=0, ddof=1) - sv) / (sv * np.sqrt(2.0 / (draws.shape[0] - 1)))
        assert np.all(np.abs(z_mean) < 4)
        assert np.all(np.abs(z_var) < 4)


class TestSimulate:
    def test_degenerate_is_constant(self):
        ar = Ar1Params(0.5, 0.0, MeanStructure.constant(3.0))
        sim = simulate_ar1(ar, ObservationNoise("constant", 1e-12), 1, 50,
                           np.random.default_rng(1))
        np.testing.assert_allclose(sim.latent, 3.0, atol=1e-12)
        np.testing.assert_allclose(sim.observed, math.exp(3.0), rtol=1e-4)

    def test_lag1_autocorrelation(self):
        ar = Ar1Params(0.7, 0.5, MeanStructure.constant(10.0))
        sim = simulate_ar1(ar, ObservationNoise("constant", 1e-12), 1, 50000,
                           np.random.default_rng(2))
        x = sim.latent - sim.latent.mean()
        acf1 = float(x[1:] @ x[:-1] / (x @ x))
        assert acf1 == pytest.approx(0.7, abs=0.01)

    def test_stationary_variance(self):
        ar = Ar1Params(0.7, 0.5, MeanStructure.constant(10.0))
        sim = simulate_ar1(ar, ObservationNoise("constant", 1e-12), 1, 200000,
                           np.random.default_rng(3))
        assert sim.latent.var() == pytest.approx(ar.stationary_variance, rel=0.02)

    def test_observation_is_exp_of_log(self):
        ar = Ar1Params(0.6, 0.3, MeanStructure.constant(1.0))
        sim = simulate_ar1(ar, ObservationNoise("constant", 0.9), 1, 100,
                           np.random.default_rng(4))
        np.testing.assert_allclose(sim.observed, np.exp(sim.log_observed), rtol=1e-12)
        assert sim.log_observed.var() > sim.latent.var() * 0.5  # noise actually added


class TestAr1Logpdf:
    def test_matches_kalman_with_exact_observation(self):
        # density of a path under the process prior == joint density of
        # "observing" that path with (numerically) zero noise
        rng = np.random.default_rng(40)
        for _ in range(20):
            T = int(rng.integers(2, 30))
            mean = MeanStructure.harmonic(rng.normal(0, 1), rng.normal(0, 5))
            ar = Ar1Params(rng.uniform(-0.9, 0.9), rng.uniform(0.1, 2.0), mean)
            x = rng.normal(0, 1, size=T)
            direct = ar1_logpdf(x, ar)
            mu = np.atleast_1d(mean_at(ar.mean, np.arange(1, T + 1)))
            dev = x - mu
            manual = -0.5 * (math.log(2 * math.pi * ar.stationary_variance)
                             + dev[0] ** 2 / ar.stationary_variance)
            manual += np.sum(
                -0.5 * (np.log(2 * math.pi * ar.var_ar)
                        + (dev[1:] - ar.phi * dev[:-1]) ** 2 / ar.var_ar)
            )
            assert direct == pytest.approx(manual, abs=1e-10)
