import math

import numpy as np
import pytest

from cwimpute.stats import (
    RngStream,
    chol_psd,
    conditional_gaussian,
    effective_sample_size,
    mvn_logpdf,
    mvn_sample,
    rng_stream,
    sample_beta,
    sample_categorical,
    sample_gamma,
    sample_inverse_wishart,
)

from conftest import random_spd


def naive_mvn_logpdf(x, mu, sigma):
    """Reference density via explicit determinant and inverse."""
    q = len(mu)
    dev = np.asarray(x) - np.asarray(mu)
    quad = dev @ np.linalg.inv(sigma) @ dev
    return -0.5 * (q * math.log(2 * math.pi) + math.log(np.linalg.det(sigma)) + quad)


class TestMvnLogpdf:
    def test_standard_normal_at_mode(self):
        got = mvn_logpdf(np.zeros(1), np.zeros(1), np.eye(1))
        assert got == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    @pytest.mark.parametrize("q", [1, 2, 5])
    def test_at_mean_identity_cov(self, q):
        mu = np.linspace(-1, 1, q)
        assert mvn_logpdf(mu, mu, np.eye(q)) == pytest.approx(-q / 2 * math.log(2 * math.pi), abs=1e-12)

    def test_matches_naive_formula(self, rng):
        for _ in range(20):
            sigma = random_spd(rng, 3)
            mu = rng.normal(size=3)
            x = rng.normal(size=3, scale=2.0)
            assert mvn_logpdf(x, mu, sigma) == pytest.approx(naive_mvn_logpdf(x, mu, sigma), abs=1e-10)

    def test_batched_rows(self, rng):
        sigma = random_spd(rng, 2)
        mu = rng.normal(size=2)
        pts = rng.normal(size=(7, 2))
        batch = mvn_logpdf(pts, mu, sigma)
        singles = [mvn_logpdf(p, mu, sigma) for p in pts]
        assert np.allclose(batch, singles, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mvn_logpdf(np.zeros(2), np.zeros(3), np.eye(3))
        with pytest.raises(ValueError):
            mvn_logpdf(np.zeros(3), np.zeros(3), np.eye(2))

    @pytest.mark.parametrize("q", [1, 2, 3])
    def test_integrates_to_one(self, q, rng):
        # Importance sampling: E_proposal[exp(logpdf - log_proposal)] = 1.
        sigma = random_spd(rng, q)
        mu = rng.normal(size=q)
        prop_sigma = 2.5 * sigma
        draws = mvn_sample(rng, mu, prop_sigma, size=1_000_000)
        ratio = np.exp(mvn_logpdf(draws, mu, sigma) - mvn_logpdf(draws, mu, prop_sigma))
        assert ratio.mean() == pytest.approx(1.0, rel=0.01)


class TestMvnSample:
    def test_tiny_covariance_sticks_to_mean(self, rng):
        eps = 1e-10
        mu = np.array([3.0, -2.0])
        draw = mvn_sample(rng, mu, eps * np.eye(2))
        assert np.all(np.abs(draw - mu) < 6 * math.sqrt(eps))

    def test_sample_mean(self, rng):
        draws = mvn_sample(rng, np.array([1.0, 2.0]), np.eye(2), size=100_000)
        assert np.all(np.abs(draws.mean(axis=0) - [1.0, 2.0]) < 0.02)

    def test_sample_covariance(self, rng):
        sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
        draws = mvn_sample(rng, np.zeros(2), sigma, size=100_000)
        assert np.all(np.abs(np.cov(draws.T) - sigma) < 0.02)


class TestCholPsd:
    def test_identity(self):
        assert np.array_equal(chol_psd(np.eye(3)), np.eye(3))

    def test_hand_factor(self):
        L = chol_psd(np.array([[4.0, 2.0], [2.0, 3.0]]))
        expected = np.array([[2.0, 0.0], [1.0, math.sqrt(2.0)]])
        assert np.allclose(L, expected, atol=1e-12)

    def test_negative_eigenvalue_rejected(self):
        # eigenvalues 3 and -1
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(np.linalg.LinAlgError, match="positive definite"):
            chol_psd(bad, name="test matrix")

    def test_near_singular_rescued_by_jitter(self):
        m = np.array([[1.0, 1.0], [1.0, 1.0]])
        L = chol_psd(m)
        assert np.allclose(L @ L.T, m, atol=1e-5)


class TestInverseWishart:
    def test_univariate_mean(self, rng):
        # q=1: draw = delta / chi2(f), mean delta / (f - 2)
        f, delta = 6.0, 2.0
        draws = np.array([sample_inverse_wishart(rng, f, [[delta]])[0, 0] for _ in range(100_000)])
        assert draws.mean() == pytest.approx(delta / (f - 2), rel=0.03)

    def test_bivariate_mean(self, rng):
        f = 10.0
        draws = np.zeros((2, 2))
        n = 30_000
        for _ in range(n):
            draws += sample_inverse_wishart(rng, f, np.eye(2))
        assert np.allclose(draws / n, np.eye(2) / (f - 3), atol=0.05 / (f - 3))

    def test_dof_too_small(self, rng):
        with pytest.raises(ValueError):
            sample_inverse_wishart(rng, 1.0, np.eye(2))

    def test_draw_is_spd(self, rng):
        for _ in range(50):
            s = sample_inverse_wishart(rng, 7.0, random_spd(rng, 3))
            assert np.all(np.linalg.eigvalsh(s) > 0)


class TestScalarSamplers:
    def test_gamma_mean(self, rng):
        draws = np.array([sample_gamma(rng, 3.0, 2.0) for _ in range(100_000)])
        assert draws.mean() == pytest.approx(1.5, rel=0.02)

    def test_beta_uniform_mean(self, rng):
        draws = np.array([sample_beta(rng, 1.0, 1.0) for _ in range(100_000)])
        assert draws.mean() == pytest.approx(0.5, abs=0.005)

    def test_parameter_validation(self, rng):
        with pytest.raises(ValueError):
            sample_gamma(rng, -1.0, 1.0)
        with pytest.raises(ValueError):
            sample_gamma(rng, 1.0, 0.0)
        with pytest.raises(ValueError):
            sample_beta(rng, 0.0, 1.0)

    def test_categorical_point_mass(self, rng):
        assert all(sample_categorical(rng, [0.0, 1.0, 0.0]) == 1 for _ in range(50))

    def test_categorical_frequencies(self, rng):
        w = np.array([1.0, 3.0])
        draws = np.array([sample_categorical(rng, w) for _ in range(20_000)])
        assert draws.mean() == pytest.approx(0.75, abs=0.01)

    def test_categorical_rejects_bad_weights(self, rng):
        with pytest.raises(ValueError):
            sample_categorical(rng, [0.0, 0.0])
        with pytest.raises(ValueError):
            sample_categorical(rng, [-1.0, 2.0])


class TestConditionalGaussian:
    def test_block_diagonal_independence(self, rng):
        sigma = np.zeros((4, 4))
        sigma[:2, :2] = random_spd(rng, 2)
        sigma[2:, 2:] = random_spd(rng, 2)
        mu = rng.normal(size=4)
        mu_c, sig_c = conditional_gaussian(mu, sigma, [0, 1], [5.0, -5.0])
        assert np.allclose(mu_c, mu[2:], atol=1e-12)
        assert np.allclose(sig_c, sigma[2:, 2:], atol=1e-12)

    def test_bivariate_hand_values(self):
        mu_c, sig_c = conditional_gaussian(
            np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]), [0], [2.0]
        )
        assert mu_c[0] == pytest.approx(1.0, abs=1e-12)
        assert sig_c[0, 0] == pytest.approx(0.75, abs=1e-12)

    def test_conditioning_at_the_mean(self):
        # equicorrelated 4-D: conditioning at the mean leaves the mean subvector
        sigma = np.full((4, 4), 0.5) + 0.5 * np.eye(4)
        mu = np.array([1.0, 3.0, 4.0, 2.0])
        mu_c, _ = conditional_gaussian(mu, sigma, [0, 1], mu[:2])
        assert np.allclose(mu_c, mu[2:], atol=1e-12)

    def test_cov_independent_of_given_values(self, rng):
        sigma = random_spd(rng, 3)
        mu = rng.normal(size=3)
        _, s1 = conditional_gaussian(mu, sigma, [1], [0.0])
        _, s2 = conditional_gaussian(mu, sigma, [1], [100.0])
        assert np.allclose(s1, s2, atol=1e-12)

    def test_factorization_identity(self, rng):
        # joint density = conditional(y | x) * marginal(x), pointwise
        for _ in range(100):
            sigma = random_spd(rng, 4)
            mu = rng.normal(size=4)
            w = rng.normal(size=4, scale=2.0)
            lhs = mvn_logpdf(w, mu, sigma)
            mu_c, sig_c = conditional_gaussian(mu, sigma, [0, 1], w[:2])
            rhs = mvn_logpdf(w[2:], mu_c, sig_c) + mvn_logpdf(w[:2], mu[:2], sigma[:2, :2])
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_requires_strict_subset(self):
        with pytest.raises(ValueError):
            conditional_gaussian(np.zeros(2), np.eye(2), [0, 1], [0.0, 0.0])

    def test_singular_block_rejected(self):
        sigma = np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(np.linalg.LinAlgError):
            conditional_gaussian(np.zeros(3), sigma, [0, 1], [0.0, 0.0])


class TestEffectiveSampleSize:
    def test_iid_chain(self, rng):
        chain = rng.standard_normal(10_000)
        ess = effective_sample_size(chain)
        assert 8_000 <= ess <= 10_500

    def test_ar1_chain(self, rng):
        rho, n = 0.9, 100_000
        noise = rng.standard_normal(n)
        chain = np.empty(n)
        chain[0] = noise[0]
        for i in range(1, n):
            chain[i] = rho * chain[i - 1] + noise[i] * math.sqrt(1 - rho**2)
        expected = n * (1 - rho) / (1 + rho)
        assert effective_sample_size(chain) == pytest.approx(expected, rel=0.2)

    def test_constant_chain(self):
        assert effective_sample_size(np.ones(50)) == 50.0

    def test_too_short(self):
        with pytest.raises(ValueError):
            effective_sample_size(np.arange(5))

    def test_capped_at_length(self, rng):
        # strongly antithetic chain would exceed n without the cap
        chain = np.tile([1.0, -1.0], 500) + 0.01 * rng.standard_normal(1000)
        assert effective_sample_size(chain) <= 1000


class TestRngStreams:
    def test_same_stream_identical(self):
        a = rng_stream(42, 3).standard_normal(16)
        b = rng_stream(42, 3).standard_normal(16)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = rng_stream(42, 0).standard_normal(16)
        b = rng_stream(42, 1).standard_normal(16)
        assert not np.array_equal(a, b)

    def test_rngstream_wrapper(self):
        s = RngStream(seed=7, stream=2)
        assert np.array_equal(s.generator().standard_normal(4), rng_stream(7, 2).standard_normal(4))

    def test_samplers_reproducible(self):
        d1 = sample_inverse_wishart(rng_stream(1), 5.0, np.eye(2))
        d2 = sample_inverse_wishart(rng_stream(1), 5.0, np.eye(2))
        assert np.array_equal(d1, d2)
