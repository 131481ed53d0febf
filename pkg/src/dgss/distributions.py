"""Random variate generation and the few distribution functions the sampler needs.

Scalar kernels (leading underscore) are numba-compiled and take a
``numpy.random.Generator``; the Gibbs kernels call them directly.  The public
wrappers validate parameters and vectorize over ``size``.  Every random draw
in the package flows through a generator made by :func:`make_rng`, so there is
no global RNG state.
"""

import math

import numba
import numpy as np
from scipy import special

from .errors import InvalidParam, NotPositiveDefinite

Rng = np.random.Generator

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# Below this standardized lower bound we switch from inverse-CDF to
# exponential rejection for the positive truncated normal.
TAIL_SWITCH = 4.0


def make_rng(seed, stream=0):
    """Independent PCG64 stream keyed by ``(seed, stream)``.

    Chains and simulation replicates each take their own stream index, so
    they can run in any order or in parallel and still reproduce.
    """
    if seed is None or int(seed) < 0:
        raise InvalidParam("seed must be a non-negative integer")
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _norm_cdf(z):
    return 0.5 * math.erfc(-z / _SQRT2)


@numba.njit(cache=True)
def _log_norm_cdf(z):
    if z > 5.0:
        return math.log1p(-0.5 * math.erfc(z / _SQRT2))
    if z > -20.0:
        return math.log(0.5 * math.erfc(-z / _SQRT2))
    # asymptotic Mills-ratio series; ten terms are below 1e-17 for z <= -20
    z2 = z * z
    term = 1.0
    series = 1.0
    for k in range(1, 11):
        term *= -(2.0 * k - 1.0) / z2
        series += term
    return -0.5 * z2 - math.log(-z) - _LOG_SQRT_2PI + math.log(series)


@numba.njit(cache=True)
def _ndtri(p):
    # Acklam's rational approximation followed by one Halley step.
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    a1 = -3.969683028665376e01
    a2 = 2.209460984245205e02
    a3 = -2.759285104469687e02
    a4 = 1.383577518672690e02
    a5 = -3.066479806614716e01
    a6 = 2.506628277459239e00
    b1 = -5.447609879822406e01
    b2 = 1.615858368580409e02
    b3 = -1.556989798598866e02
    b4 = 6.680131188771972e01
    b5 = -1.328068155288572e01
    c1 = -7.784894002430293e-03
    c2 = -3.223964580411365e-01
    c3 = -2.400758277161838e00
    c4 = -2.549732539343734e00
    c5 = 4.374664141464968e00
    c6 = 2.938163982698783e00
    d1 = 7.784695709041462e-03
    d2 = 3.224671290700398e-01
    d3 = 2.445134137142996e00
    d4 = 3.754408661907416e00
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / (
            (((d1 * q + d2) * q + d3) * q + d4) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q / (
            ((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / (
            (((d1 * q + d2) * q + d3) * q + d4) * q + 1.0
        )
    if p < 0.5:
        e = 0.5 * math.erfc(-x / _SQRT2) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / _SQRT2)
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@numba.njit(cache=True)
def _std_truncnorm_above(rng, lower):
    """Standard normal conditioned on Z > lower."""
    if lower < -8.0:
        # truncation mass below 1e-15: plain rejection terminates immediately
        while True:
            z = rng.standard_normal()
            if z > lower:
                return z
    if lower < TAIL_SWITCH:
        tail = 0.5 * math.erfc(lower / _SQRT2)
        v = 1.0 - rng.random()
        z = -_ndtri(v * tail)
        if z < lower:
            z = lower
        return z
    # Robert (1995) translated-exponential proposal with optimal rate
    lam = 0.5 * (lower + math.sqrt(lower * lower + 4.0))
    while True:
        z = lower + rng.standard_exponential() / lam
        d = z - lam
        if rng.random() <= math.exp(-0.5 * d * d):
            return z


@numba.njit(cache=True)
def _truncnorm_pos(rng, mean, sd):
    z = _std_truncnorm_above(rng, -mean / sd)
    x = mean + sd * z
    return x if x > 0.0 else 0.0


@numba.njit(cache=True)
def _gamma(rng, shape, rate):
    return rng.standard_gamma(shape) / rate


@numba.njit(cache=True)
def _invgamma(rng, shape, rate):
    return rate / rng.standard_gamma(shape)


@numba.njit(cache=True)
def _beta(rng, a, b):
    return rng.beta(a, b)


@numba.njit(cache=True)
def _bernoulli(rng, p):
    return 1 if rng.random() < p else 0


@numba.njit(cache=True)
def _truncnorm_pos_many(rng, mean, sd, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = _truncnorm_pos(rng, mean, sd)
    return out


@numba.njit(cache=True)
def _gamma_many(rng, shape, rate, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = _gamma(rng, shape, rate)
    return out


@numba.njit(cache=True)
def _invgamma_many(rng, shape, rate, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = _invgamma(rng, shape, rate)
    return out


@numba.njit(cache=True)
def _beta_many(rng, a, b, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = _beta(rng, a, b)
    return out


@numba.njit(cache=True)
def _bernoulli_many(rng, p, n):
    out = np.empty(n, dtype=np.int8)
    for i in range(n):
        out[i] = _bernoulli(rng, p)
    return out


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------


def _scalar_or_array(many, rng, params, size):
    n = 1 if size is None else int(np.prod(size))
    out = many(rng, *params, n)
    if size is None:
        return out[0].item()
    return out.reshape(size)


def _positive(name, value):
    value = float(value)
    if not (value > 0.0 and math.isfinite(value)):
        raise InvalidParam(f"{name} must be positive and finite, got {value}")
    return value


def sample_truncnormal_pos(rng, mean, var, size=None):
    """Draw from N(mean, var) restricted to [0, inf).

    Valid for any finite mean, including means many standard deviations
    below zero, where the exponential-rejection branch takes over.
    """
    sd = math.sqrt(_positive("var", var))
    mean = float(mean)
    if not math.isfinite(mean):
        raise InvalidParam("mean must be finite")
    return _scalar_or_array(_truncnorm_pos_many, rng, (mean, sd), size)


def sample_mvn(rng, mean, cov, size=None):
    """``mean + L z`` with ``L`` the lower Cholesky factor of ``cov``.

    With ``size`` the result has shape ``(size, q)``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc
    if size is None:
        return mean + chol @ rng.standard_normal(mean.shape[0])
    return mean + rng.standard_normal((int(size), mean.shape[0])) @ chol.T


def sample_beta(rng, a, b, size=None):
    return _scalar_or_array(_beta_many, rng, (_positive("a", a), _positive("b", b)), size)


def sample_gamma(rng, shape, rate, size=None):
    """Gamma with density proportional to ``x**(shape-1) * exp(-rate*x)``."""
    params = (_positive("shape", shape), _positive("rate", rate))
    return _scalar_or_array(_gamma_many, rng, params, size)


def sample_invgamma(rng, shape, rate, size=None):
    """Inverse-Gamma with density proportional to ``x**(-shape-1) * exp(-rate/x)``."""
    params = (_positive("shape", shape), _positive("rate", rate))
    return _scalar_or_array(_invgamma_many, rng, params, size)


def sample_bernoulli(rng, p, size=None):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise InvalidParam(f"p must lie in [0, 1], got {p}")
    return _scalar_or_array(_bernoulli_many, rng, (p,), size)


def beta_cdf(x, a, b):
    """Regularized incomplete beta function I_x(a, b)."""
    a = _positive("a", a)
    b = _positive("b", b)
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)) or np.any(~np.isfinite(x)):
        raise InvalidParam("x must lie in [0, 1]")
    out = special.betainc(a, b, x)
    return float(out) if out.ndim == 0 else out


def lognormal_cdf(z):
    """log of the standard normal CDF, finite for all finite ``z``."""
    if np.ndim(z) == 0:
        return _log_norm_cdf(float(z))
    z = np.asarray(z, dtype=float)
    return np.array([_log_norm_cdf(v) for v in z.ravel()]).reshape(z.shape)


def truncnormal_pos_cdf(x, mean, var):
    """Analytic CDF of N(mean, var) restricted to [0, inf).

    Written with log upper tails so it stays accurate when the truncation
    point sits far in the tail (mean << 0).
    """
    sd = math.sqrt(var)
    x = np.asarray(x, dtype=float)
    log_mass = special.log_ndtr(mean / sd)
    with np.errstate(divide="ignore"):
        log_upper = special.log_ndtr(-(np.maximum(x, 0.0) - mean) / sd)
    cdf = -np.expm1(log_upper - log_mass)
    return np.clip(cdf, 0.0, 1.0)
