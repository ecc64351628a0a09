"""Student-t numerics against closed forms, scipy, and quadrature oracles."""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from barlab.tdist import (
    GaussianParams,
    StudentTParams,
    digamma,
    gauss_cdf,
    gauss_logpdf,
    log_gamma,
    reg_inc_beta,
    t_cdf,
    t_logpdf,
    t_logpdf_grad,
    t_mean_var,
    t_quantile,
)

HALF_LN_2PI = 0.5 * math.log(2 * math.pi)


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def test_log_gamma_closed_forms():
    assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-12)
    assert log_gamma(2.0) == pytest.approx(0.0, abs=1e-12)
    assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), abs=1e-12)


def test_log_gamma_recurrence():
    # Gamma(x+1) = x Gamma(x)
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 50.0, size=500)
    np.testing.assert_allclose(log_gamma(x + 1.0), log_gamma(x) + np.log(x), rtol=1e-12, atol=1e-12)


def test_log_gamma_against_scipy():
    rng = np.random.default_rng(1)
    xs = np.concatenate([rng.uniform(0.01, 10.0, 3000), 10 ** rng.uniform(1.0, 6.0, 3000)])
    mine = log_gamma(xs)
    ref = special.gammaln(xs)
    small = np.abs(ref) <= 1e3
    np.testing.assert_allclose(mine[small], ref[small], atol=1e-10)
    # rtol-only is meaningless near the zeros of lgamma at x = 1, 2
    np.testing.assert_allclose(mine, ref, rtol=5e-13, atol=1e-12)


def test_log_gamma_summation_oracle():
    # ln Gamma(n) = sum ln k for integer n
    for n in (3, 7, 20, 60):
        assert log_gamma(float(n)) == pytest.approx(sum(math.log(k) for k in range(1, n)), rel=1e-13)


def test_log_gamma_domain():
    with pytest.raises(ValueError):
        log_gamma(0.0)
    with pytest.raises(ValueError):
        log_gamma(-1.5)


def test_digamma_euler_mascheroni():
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-12)


def test_digamma_matches_finite_difference_of_log_gamma():
    rng = np.random.default_rng(2)
    x = rng.uniform(0.3, 100.0, size=200)
    h = 1e-6 * np.maximum(1.0, x)
    fd = (log_gamma(x + h) - log_gamma(x - h)) / (2 * h)
    np.testing.assert_allclose(digamma(x), fd, rtol=1e-7)


def test_digamma_against_scipy():
    rng = np.random.default_rng(3)
    xs = np.concatenate([rng.uniform(0.01, 10.0, 2000), 10 ** rng.uniform(1.0, 6.0, 2000)])
    np.testing.assert_allclose(digamma(xs), special.psi(xs), rtol=1e-11, atol=1e-11)


def test_reg_inc_beta_edges_and_monotonicity():
    assert reg_inc_beta(2.0, 3.0, 0.0) == 0.0
    assert reg_inc_beta(2.0, 3.0, 1.0) == 1.0
    x = np.linspace(0.0, 1.0, 501)
    v = reg_inc_beta(1.7, 0.5, x)
    assert np.all(np.diff(v) >= 0.0)


def test_reg_inc_beta_against_scipy():
    rng = np.random.default_rng(4)
    a = 10 ** rng.uniform(-1, 3, 4000)
    b = 10 ** rng.uniform(-1, 3, 4000)
    x = rng.uniform(0.0, 1.0, 4000)
    np.testing.assert_allclose(reg_inc_beta(a, b, x), special.betainc(a, b, x), atol=1e-10)


def test_reg_inc_beta_domain():
    with pytest.raises(ValueError):
        reg_inc_beta(-1.0, 2.0, 0.5)
    with pytest.raises(ValueError):
        reg_inc_beta(1.0, 2.0, 1.5)


# ---------------------------------------------------------------------------
# t log density
# ---------------------------------------------------------------------------


def test_t_logpdf_symmetry():
    p = StudentTParams(mu=0.7, sigma=1.3, nu=4.2)
    for a in (0.1, 1.0, 5.0, 40.0):
        assert t_logpdf(p, p.mu + a) == pytest.approx(t_logpdf(p, p.mu - a), rel=1e-14)


def test_t_logpdf_normal_limit():
    # nu -> inf proxy at the standard normal peak: -0.5 ln(2 pi)
    val = t_logpdf((0.0, 1.0, 1e6), 0.0)
    assert val == pytest.approx(-HALF_LN_2PI, abs=1e-4)


def test_t_logpdf_quadrature_normalization():
    for nu in (2.1, 3.0, 5.0, 30.0, 1e6):
        total, _ = integrate.quad(
            lambda y: math.exp(t_logpdf((0.0, 1.0, nu), y)), -np.inf, np.inf
        )
        assert total == pytest.approx(1.0, abs=1e-6), f"nu={nu}"


def test_t_logpdf_near_cauchy_normalization():
    total, _ = integrate.quad(
        lambda y: math.exp(t_logpdf((0.0, 1.0, 2.0001), y)), -np.inf, np.inf
    )
    assert total == pytest.approx(1.0, abs=1e-6)


def test_t_logpdf_matches_scipy():
    rng = np.random.default_rng(5)
    y = rng.normal(0, 5, 500)
    np.testing.assert_allclose(
        t_logpdf((0.4, 2.2, 3.7), y), stats.t.logpdf(y, 3.7, 0.4, 2.2), rtol=1e-12
    )


def test_t_params_domain():
    with pytest.raises(ValueError):
        StudentTParams(mu=0.0, sigma=0.0, nu=3.0)
    with pytest.raises(ValueError):
        StudentTParams(mu=0.0, sigma=1.0, nu=2.0)
    with pytest.raises(ValueError):
        t_logpdf((0.0, 1.0, 1.5), 0.0)


# ---------------------------------------------------------------------------
# t CDF and quantiles
# ---------------------------------------------------------------------------


def test_t_cdf_median_exact():
    assert t_cdf((1.5, 0.7, 3.3), 1.5) == 0.5


def test_t_cdf_normal_limit():
    assert t_cdf((0.0, 1.0, 1e6), 1.959964) == pytest.approx(0.975, abs=1e-4)


def test_t_cdf_quadrature_oracle():
    # nu = 3, y = 1: integrate the density
    val, _ = integrate.quad(lambda y: math.exp(t_logpdf((0.0, 1.0, 3.0), y)), -np.inf, 1.0)
    assert t_cdf((0.0, 1.0, 3.0), 1.0) == pytest.approx(val, abs=1e-8)


def test_t_cdf_strictly_increasing():
    y = np.linspace(-30, 30, 2001)
    f = t_cdf((0.0, 1.0, 2.5), y)
    assert np.all(np.diff(f) > 0.0)


def test_cdf_quantile_round_trip():
    q = np.arange(1, 100) / 100.0
    for nu in (2.5, 5.0, 50.0):
        x = t_quantile((0.3, 1.7, nu), q)
        np.testing.assert_allclose(t_cdf((0.3, 1.7, nu), x), q, atol=1e-8)


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def test_t_mean_var_formulas():
    mean, var = t_mean_var((0.5, 2.0, 1e6))
    assert mean == 0.5
    assert var == pytest.approx(4.000008, rel=1e-6)
    _, var4 = t_mean_var((0.0, 1.0, 4.0))
    assert var4 == pytest.approx(2.0, rel=1e-14)


def test_t_variance_monte_carlo():
    rng = np.random.default_rng(6)
    z = rng.standard_t(5.0, size=10_000_000)
    _, var = t_mean_var((0.0, 1.0, 5.0))
    assert var == pytest.approx(z.var(), rel=0.01)
    assert var == pytest.approx(5.0 / 3.0, rel=1e-14)


def test_t_mean_var_domain():
    with pytest.raises(ValueError):
        t_mean_var((0.0, 1.0, 2.0))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_t_grad_zero_at_mode():
    d_mu, _, _ = t_logpdf_grad((1.0, 2.0, 5.0), 1.0)
    assert d_mu == 0.0


def test_t_grad_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(100):
        mu = rng.normal()
        sigma = math.exp(rng.normal())
        nu = 2.0 + math.exp(rng.normal())
        y = rng.normal(mu, 2 * sigma)
        g = t_logpdf_grad((mu, sigma, nu), y)
        for i, (lo, hi) in enumerate(
            [
                ((mu - 1e-4, sigma, nu), (mu + 1e-4, sigma, nu)),
                ((mu, sigma * (1 - 1e-4), nu), (mu, sigma * (1 + 1e-4), nu)),
                ((mu, sigma, nu * (1 - 1e-4)), (mu, sigma, nu * (1 + 1e-4))),
            ]
        ):
            step = (hi[i] - lo[i]) if i == 0 else (hi[i] - lo[i])
            fd = (t_logpdf(hi, y) - t_logpdf(lo, y)) / step
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-9), f"partial {i}"


def test_t_grad_sigma_normal_limit():
    # Gaussian d/dsigma log pdf = (z^2 - 1)/sigma
    mu, sigma, nu = 0.0, 1.5, 1e6
    y = 2.3
    z = (y - mu) / sigma
    _, d_sigma, _ = t_logpdf_grad((mu, sigma, nu), y)
    assert d_sigma == pytest.approx((z * z - 1.0) / sigma, abs=1e-3)


# ---------------------------------------------------------------------------
# Gaussian counterpart
# ---------------------------------------------------------------------------


def test_gauss_logpdf_standard_peak():
    assert gauss_logpdf((0.0, 1.0), 0.0) == pytest.approx(-0.918939, abs=1e-6)


def test_gauss_cdf_values():
    assert gauss_cdf((0.0, 1.0), 0.0) == 0.5
    assert gauss_cdf((0.0, 1.0), 1.959964) == pytest.approx(0.975, abs=1e-6)
    rng = np.random.default_rng(8)
    z = rng.normal(0, 3, 5000)
    np.testing.assert_allclose(gauss_cdf((0.0, 1.0), z), stats.norm.cdf(z), atol=1e-13)


def test_gauss_domain():
    with pytest.raises(ValueError):
        GaussianParams(mu=0.0, var=0.0)
    with pytest.raises(ValueError):
        gauss_logpdf((0.0, -1.0), 0.0)


def test_gaussian_agreement_large_nu():
    # matched mean/variance at nu = 1e6 over y in mu +- 6 sigma
    mu, sigma, nu = 0.3, 1.4, 1e6
    _, var = t_mean_var((mu, sigma, nu))
    y = np.linspace(mu - 6 * sigma, mu + 6 * sigma, 1001)
    diff = np.abs(t_logpdf((mu, sigma, nu), y) - gauss_logpdf((mu, var), y))
    assert diff.max() < 1e-3
