"""Student's-t distribution numerics.

Location-scale Student's t with nu > 2 (finite variance, needed by the
conditional-variance metrics), its Gaussian counterpart, and the special
functions both require:

    log pdf:  lnG((nu+1)/2) - lnG(nu/2) - 0.5*ln(nu*pi) - ln(sigma)
              - ((nu+1)/2) * ln(1 + z^2/nu),   z = (y - mu)/sigma
    cdf:      via the regularized incomplete beta function I_x(a, b)
    variance: sigma^2 * nu / (nu - 2)

Everything is pure numpy, vectorized, and reentrant. No external math
library is used; the special functions are validated in the test suite
against quadrature and closed-form oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StudentTParams",
    "GaussianParams",
    "log_gamma",
    "digamma",
    "reg_inc_beta",
    "t_logpdf",
    "t_cdf",
    "t_quantile",
    "t_mean_var",
    "t_logpdf_grad",
    "gauss_logpdf",
    "gauss_cdf",
]

_HALF_LN_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class StudentTParams:
    """Location-scale Student's t parameters; sigma > 0 and nu > 2."""

    mu: float
    sigma: float
    nu: float

    def __post_init__(self):
        if not (self.sigma > 0.0):
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not (self.nu > 2.0):
            raise ValueError(f"nu must be > 2, got {self.nu}")


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    var: float

    def __post_init__(self):
        if not (self.var > 0.0):
            raise ValueError(f"var must be > 0, got {self.var}")


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

# Lanczos approximation, g = 7, n = 9 (double-precision coefficient set).
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)


def log_gamma(x):
    """ln Gamma(x) for x > 0, Lanczos approximation with reflection.

    Accurate to ~1e-13 relative over the working range; validated against
    closed forms (Gamma(1) = Gamma(2) = 1, Gamma(1/2) = sqrt(pi)) and an
    independent oracle in the tests.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0):  # NaN propagates (poison value, not a domain error)
        raise ValueError("log_gamma requires x > 0")
    xmin = x.min() if x.size else 1.0
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if xmin >= 0.5:  # hot path: no reflection needed
        out = _lanczos_lgamma(x)
        return out[0] if scalar else out
    out = np.empty_like(x)

    # reflection for x < 0.5: Gamma(x) = pi / (sin(pi x) * Gamma(1 - x))
    small = x < 0.5
    xs = x[small]
    out[small] = (
        math.log(math.pi)
        - np.log(np.sin(math.pi * xs))
        - _lanczos_lgamma(1.0 - xs)
    )
    out[~small] = _lanczos_lgamma(x[~small])
    return out[0] if scalar else out


def _lanczos_lgamma(x):
    z = x - 1.0
    base = z + _LANCZOS_G + 0.5
    series = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        series = series + _LANCZOS_COEF[i] / (z + i)
    return (z + 0.5) * np.log(base) - base + 0.5 * math.log(2.0 * math.pi) + np.log(series)


# Bernoulli-number coefficients B_2n / (2n) for the digamma asymptotic series.
_DIGAMMA_ASY = np.array(
    [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ]
)


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0.

    Upward recurrence to x >= 6, then the asymptotic series
    psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^2n).
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0):  # NaN propagates (poison value, not a domain error)
        raise ValueError("digamma requires x > 0")
    finite = x[np.isfinite(x)]
    xmin = finite.min() if finite.size else 6.0
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    # shift everything into the asymptotic regime in one branchless pass
    shift = max(0, int(np.ceil(6.0 - xmin)))
    acc = np.zeros_like(x)
    if shift:
        xs = x.copy()
        for _ in range(shift):
            acc -= 1.0 / xs
            xs += 1.0
        x = xs
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    power = inv2.copy()
    for c in _DIGAMMA_ASY:
        series += c * power
        power *= inv2
    out = acc + np.log(x) - 0.5 / x - series
    return out[0] if scalar else out


def _betacf(a, b, x, max_iter=300, eps=1e-15):
    """Continued fraction for the incomplete beta (Lentz's method), vectorized."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    converged = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = h * d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        converged |= np.abs(delta - 1.0) < eps
        if np.all(converged):
            break
    return h


def reg_inc_beta(a, b, x):
    """Regularized incomplete beta I_x(a, b) for a, b > 0, x in [0, 1].

    Continued fraction with the symmetry switch at x = (a+1)/(a+b+2);
    monotone nondecreasing in x.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise ValueError("reg_inc_beta requires a > 0 and b > 0")
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("reg_inc_beta requires x in [0, 1]")
    a, b, x = np.broadcast_arrays(a, b, x)
    scalar = x.ndim == 0
    a = np.atleast_1d(a).astype(np.float64)
    b = np.atleast_1d(b).astype(np.float64)
    x = np.atleast_1d(x).astype(np.float64)
    out = np.empty_like(x)

    edge0 = x == 0.0
    edge1 = x == 1.0
    out[edge0] = 0.0
    out[edge1] = 1.0
    inner = ~(edge0 | edge1)
    if np.any(inner):
        ai, bi, xi = a[inner], b[inner], x[inner]
        ln_front = (
            ai * np.log(xi)
            + bi * np.log1p(-xi)
            - np.log(ai)
            - (log_gamma(ai) + log_gamma(bi) - log_gamma(ai + bi))
        )
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        res = np.empty_like(xi)
        if np.any(direct):
            res[direct] = np.exp(ln_front[direct]) * _betacf(
                ai[direct], bi[direct], xi[direct]
            )
        if np.any(~direct):
            # I_x(a, b) = 1 - I_{1-x}(b, a)
            aj, bj, xj = ai[~direct], bi[~direct], xi[~direct]
            ln_front_swap = (
                bj * np.log1p(-xj)
                + aj * np.log(xj)
                - np.log(bj)
                - (log_gamma(bj) + log_gamma(aj) - log_gamma(aj + bj))
            )
            res[~direct] = 1.0 - np.exp(ln_front_swap) * _betacf(bj, aj, 1.0 - xj)
        out[inner] = res
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# Student's t
# ---------------------------------------------------------------------------


def _check_params(mu, sigma, nu):
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be > 0")
    if np.any(nu <= 2.0):
        raise ValueError("nu must be > 2")
    return mu, sigma, nu


def _unpack(p):
    if isinstance(p, StudentTParams):
        return p.mu, p.sigma, p.nu
    return p  # (mu, sigma, nu) tuple of arrays/scalars


def t_logpdf(p, y):
    """Log density of the location-scale t at y; finite for all finite y."""
    mu, sigma, nu = _check_params(*_unpack(p))
    y = np.asarray(y, dtype=np.float64)
    z = (y - mu) / sigma
    return (
        log_gamma((nu + 1.0) / 2.0)
        - log_gamma(nu / 2.0)
        - 0.5 * np.log(nu * math.pi)
        - np.log(sigma)
        - ((nu + 1.0) / 2.0) * np.log1p(z * z / nu)
    )


def t_cdf(p, y):
    """CDF of the location-scale t; F(mu) = 0.5 exactly by symmetry."""
    mu, sigma, nu = _check_params(*_unpack(p))
    y = np.asarray(y, dtype=np.float64)
    z = (y - mu) / sigma
    z, nu = np.broadcast_arrays(z, nu)
    scalar = z.ndim == 0
    z = np.atleast_1d(z).astype(np.float64)
    nu = np.atleast_1d(nu).astype(np.float64)
    z2 = z * z
    # lower tail P(T <= -|z|) = I_w(nu/2, 1/2) / 2 with w = nu/(nu+z^2);
    # near the median use the complementary orientation so the beta argument
    # u = z^2/(nu+z^2) is formed without cancellation (w would round to 1)
    tail = np.empty_like(z)
    inner = z2 <= nu
    if np.any(inner):
        u = z2[inner] / (nu[inner] + z2[inner])
        tail[inner] = 0.5 * (1.0 - reg_inc_beta(0.5, nu[inner] / 2.0, u))
    if np.any(~inner):
        w = nu[~inner] / (nu[~inner] + z2[~inner])
        tail[~inner] = 0.5 * reg_inc_beta(nu[~inner] / 2.0, 0.5, w)
    out = np.where(z <= 0.0, tail, 1.0 - tail)
    out[z == 0.0] = 0.5
    return out[0] if scalar else out


def t_quantile(p, q, tol=1e-12, max_iter=200):
    """Inverse CDF by monotone bisection on t_cdf; q strictly in (0, 1)."""
    mu, sigma, nu = _check_params(*_unpack(p))
    q = np.asarray(q, dtype=np.float64)
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise ValueError("quantile level must be in (0, 1)")
    q, mu, sigma, nu = np.broadcast_arrays(q, mu, sigma, nu)
    scalar = q.ndim == 0
    q = np.atleast_1d(q).astype(np.float64)
    mu = np.atleast_1d(mu).astype(np.float64)
    sigma = np.atleast_1d(sigma).astype(np.float64)
    nu = np.atleast_1d(nu).astype(np.float64)

    # bracket in standardized units, expanding until the CDF straddles q
    lo = np.full_like(q, -1.0)
    hi = np.full_like(q, 1.0)
    for _ in range(200):
        need_lo = t_cdf((0.0, 1.0, nu), lo) > q
        need_hi = t_cdf((0.0, 1.0, nu), hi) < q
        if not (np.any(need_lo) or np.any(need_hi)):
            break
        lo[need_lo] *= 2.0
        hi[need_hi] *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = t_cdf((0.0, 1.0, nu), mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < tol:
            break
    z = 0.5 * (lo + hi)
    out = mu + sigma * z
    return out[0] if scalar else out


def t_mean_var(p):
    """(mean, variance) = (mu, sigma^2 * nu / (nu - 2)); requires nu > 2."""
    mu, sigma, nu = _check_params(*_unpack(p))
    return mu, sigma * sigma * nu / (nu - 2.0)


def t_logpdf_grad(p, y):
    """Analytic (d/dmu, d/dsigma, d/dnu) of t_logpdf; d/dnu uses digamma."""
    mu, sigma, nu = _check_params(*_unpack(p))
    y = np.asarray(y, dtype=np.float64)
    z = (y - mu) / sigma
    z2 = z * z
    w = 1.0 + z2 / nu
    d_mu = (nu + 1.0) * z / (sigma * nu * w)
    d_sigma = ((nu + 1.0) * z2 / (nu * w) - 1.0) / sigma
    d_nu = 0.5 * (
        digamma((nu + 1.0) / 2.0)
        - digamma(nu / 2.0)
        - 1.0 / nu
        - np.log(w)
        + (nu + 1.0) * z2 / (nu * nu * w)
    )
    return d_mu, d_sigma, d_nu


# ---------------------------------------------------------------------------
# Gaussian counterpart (ablation + N(0,1) baseline)
# ---------------------------------------------------------------------------


def _unpack_gauss(g):
    if isinstance(g, GaussianParams):
        return g.mu, g.var
    return g


def gauss_logpdf(g, y):
    mu, var = _unpack_gauss(g)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0.0):
        raise ValueError("var must be > 0")
    y = np.asarray(y, dtype=np.float64)
    return -_HALF_LN_2PI - 0.5 * np.log(var) - 0.5 * (y - mu) ** 2 / var


def gauss_cdf(g, y):
    mu, var = _unpack_gauss(g)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0.0):
        raise ValueError("var must be > 0")
    y = np.asarray(y, dtype=np.float64)
    z = (y - mu) / np.sqrt(var)
    return 0.5 * _erfc_vec(-z / math.sqrt(2.0))


def _erfc_vec(x):
    """Complementary error function erfc(x) = Q(1/2, x^2).

    Lower-gamma power series for |x| < 1.5, upper-gamma continued fraction
    (Lentz) beyond; near machine precision on both branches.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    ax = np.abs(x)
    t = ax * ax
    out = np.empty_like(ax)

    a = 0.5
    lg_a = 0.5723649429247001  # ln Gamma(1/2) = ln(sqrt(pi))

    series = ax < 1.5
    if np.any(series):
        ts = t[series]
        # P(a, t) = t^a e^-t / Gamma(a) * sum_n t^n / (a (a+1) ... (a+n))
        ap = np.full_like(ts, a)
        summand = np.full_like(ts, 1.0 / a)
        total = summand.copy()
        for _ in range(200):
            ap += 1.0
            summand = summand * ts / ap
            total += summand
            if np.all(np.abs(summand) < np.abs(total) * 1e-17):
                break
        with np.errstate(divide="ignore"):
            ln_t = np.where(ts > 0.0, np.log(ts), -np.inf)
        p_low = np.where(ts > 0.0, total * np.exp(-ts + a * ln_t - lg_a), 0.0)
        out[series] = 1.0 - p_low
    if np.any(~series):
        tc = t[~series]
        # Q(a, t) via continued fraction (Lentz)
        tiny = 1e-300
        b = tc + 1.0 - a
        c = np.full_like(tc, 1.0 / tiny)
        d = 1.0 / b
        h = d.copy()
        for i in range(1, 300):
            an = -i * (i - a)
            b += 2.0
            d = an * d + b
            d = np.where(np.abs(d) < tiny, tiny, d)
            c = b + an / c
            c = np.where(np.abs(c) < tiny, tiny, c)
            d = 1.0 / d
            delta = d * c
            h *= delta
            if np.all(np.abs(delta - 1.0) < 1e-16):
                break
        out[~series] = np.exp(-tc + a * np.log(tc) - lg_a) * h

    res = np.where(x >= 0.0, out, 2.0 - out)
    return res[0] if scalar else res
