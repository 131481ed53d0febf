"""Brute-force reference values for the sampler's closed-form pieces.

Each oracle integrates or simulates the model directly from its densities,
sharing no algebra with the closed forms in :mod:`dgss.gibbs`.  Results are
returned on the log scale where overflow is possible.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import gibbs
from .distributions import make_rng
from .errors import InvalidParam, QuadratureFailure
from .model import Dataset, HyperParams, SamplerState, prior_inclusion_probability

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    width: float = 12.0
    limit: int = 200

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0 or self.width <= 0:
            raise InvalidParam("tolerances and width must be positive")


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    se: float
    log_value: float
    rel_se: float = 0.0


# ---------------------------------------------------------------------------
# covariate level
# ---------------------------------------------------------------------------


def _cov_log_integrand(resid, design, b, sigma2, s2):
    base = resid @ resid

    def g(tau):
        r = resid - tau * b * design
        loglik = -(r @ r - base) / (2.0 * sigma2)
        return loglik + math.log(2.0) - 0.5 * math.log(2.0 * math.pi * s2) - tau * tau / (2.0 * s2)

    return g


def _curvature_scale(g, x0, h):
    # second difference of a smooth log-density gives its local Gaussian width
    c = -(g(x0 + 2 * h) - 2 * g(x0 + h) + g(x0)) / (h * h)
    if not c > 0:
        raise QuadratureFailure("log integrand is not locally concave")
    return 1.0 / math.sqrt(c)


def oracle_cov_bayes_ratio(resid, design, b, sigma2, s2, spec=None, log=False):
    """Integrate likelihood times the half-normal slab over ``tau_tilde >= 0``.

    Divides by the ``tau_tilde = 0`` likelihood.  The window is the mode
    plus or minus ``spec.width`` Gaussian-envelope widths, clipped at zero.
    """
    spec = spec or QuadratureSpec()
    resid = np.asarray(resid, dtype=float).ravel()
    design = np.asarray(design, dtype=float).ravel()
    if resid.shape != design.shape:
        raise InvalidParam("resid and design must have equal length")
    if resid.size == 0 or b == 0:
        return 0.0 if log else 1.0
    g = _cov_log_integrand(resid, design, float(b), float(sigma2), float(s2))
    sd = _curvature_scale(g, 0.0, math.sqrt(s2))
    sd = _curvature_scale(g, 0.0, sd)
    # finite-difference Newton steps from zero locate the peak
    mode = 0.0
    for _ in range(3):
        slope = (g(mode + sd) - g(mode - sd)) / (2.0 * sd)
        mode = max(mode + slope * sd * sd, 0.0)
    gmax = g(mode)
    lo = max(0.0, mode - spec.width * sd)
    hi = mode + spec.width * sd
    if mode == 0.0:
        # peak on the boundary: the integrand can fall off exponentially much
        # faster than its Gaussian width, at the rate of its slope at zero
        slope = (g(1e-3 * sd) - g(0.0)) / (1e-3 * sd)
        if slope < 0:
            hi = min(hi, 50.0 / -slope)
    pts = [mode] if lo < mode < hi else None
    val, err = integrate.quad(lambda t: math.exp(g(t) - gmax), lo, hi, points=pts,
                              epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=spec.limit)
    if not val > 0 or err > max(spec.abs_tol, 1e-8 * val):
        raise QuadratureFailure(f"covariate-level quadrature error {err:.3g}")
    out = gmax + math.log(val)
    return out if log else math.exp(out)


# ---------------------------------------------------------------------------
# node level
# ---------------------------------------------------------------------------


def _node_log_integrand_factory(Z, XV, sigma2):
    base = Z @ Z
    G = XV.T @ XV
    c = XV.T @ Z
    q = XV.shape[1]

    def g(bvec):
        # -||Z - XV b||^2 / 2 sigma2 relative to b = 0, plus the N(0, I) log density
        quad = base - 2.0 * (bvec @ c) + bvec @ G @ bvec
        return -(quad - base) / (2.0 * sigma2) - 0.5 * q * _LOG_2PI - 0.5 * (bvec @ bvec)

    def g_many(B):
        quad = base - 2.0 * (B @ c) + np.sum((B @ G) * B, axis=1)
        return -(quad - base) / (2.0 * sigma2) - 0.5 * q * _LOG_2PI - 0.5 * np.sum(B * B, axis=1)

    return g, g_many


def _numerical_mode(g, q):
    res = optimize.minimize(lambda b: -g(b), np.zeros(q), method="BFGS",
                            options={"gtol": 1e-10})
    mode = res.x
    # central-difference Hessian of -g
    h = 1e-3 * max(1.0, float(np.max(np.abs(mode))))
    H = np.empty((q, q))
    e = np.eye(q) * h
    for a in range(q):
        for c in range(q):
            H[a, c] = -(g(mode + e[a] + e[c]) - g(mode + e[a] - e[c])
                        - g(mode - e[a] + e[c]) + g(mode - e[a] - e[c])) / (4 * h * h)
    H = 0.5 * (H + H.T)
    # refine the mode by Newton steps, exact for a quadratic log integrand
    for _ in range(3):
        grad = np.array([(g(mode + e[a]) - g(mode - e[a])) / (2 * h) for a in range(q)])
        mode = mode + np.linalg.solve(H, grad)
    return mode, H


def oracle_node_bayes_ratio(Z, XV, sigma2, spec=None, log=False, n_draws=10**7, rng=None,
                            method=None):
    """Integrate the Gaussian likelihood against the N(0, I) prior on ``b``.

    ``method`` is ``"quadrature"`` (default for ``q <= 2``) or
    ``"monte_carlo"`` (default for ``q >= 3``).  Quadrature runs in whitened
    coordinates around the numerical mode and returns a float; Monte Carlo
    uses importance sampling from an inflated Gaussian at the mode and
    returns a :class:`MonteCarloEstimate`.
    """
    spec = spec or QuadratureSpec()
    Z = np.asarray(Z, dtype=float).ravel()
    XV = np.asarray(XV, dtype=float)
    if XV.ndim == 1:
        XV = XV[:, None]
    q = XV.shape[1]
    if XV.shape[0] != Z.shape[0]:
        raise InvalidParam("Z and XV must have the same number of rows")
    method = method or ("quadrature" if q <= 2 else "monte_carlo")
    if not np.any(XV):
        out = 0.0 if log else 1.0
        return out if method == "quadrature" else MonteCarloEstimate(1.0, 0.0, 0.0, 0.0)
    g, g_many = _node_log_integrand_factory(Z, XV, float(sigma2))
    mode, H = _numerical_mode(g, q)
    if method == "quadrature":
        if q > 2:
            raise InvalidParam("tensor quadrature is limited to q <= 2")
        C = np.linalg.cholesky(np.linalg.inv(H))
        logjac = float(np.sum(np.log(np.diag(C))))
        gmax = g(mode)
        w = spec.width

        def f(*u):
            return math.exp(g(mode + C @ np.array(u)) - gmax)

        val, err = integrate.nquad(f, [(-w, w)] * q,
                                   opts={"epsabs": spec.abs_tol, "epsrel": spec.rel_tol,
                                         "limit": spec.limit})
        if not val > 0 or err > max(spec.abs_tol, 1e-8 * val):
            raise QuadratureFailure(f"node-level quadrature error {err:.3g}")
        out = gmax + logjac + math.log(val)
        return out if log else math.exp(out)
    return _importance_sample(g_many, mode, H, n_draws, rng or make_rng(0))


def _importance_sample(g_many, mode, H, n_draws, rng, chunk=10**6):
    q = mode.shape[0]
    # proposal N(mode, 2 H^-1): heavier than the target, so weights stay bounded
    L = np.linalg.cholesky(2.0 * np.linalg.inv(H))
    log_norm = -float(np.sum(np.log(np.diag(L)))) - 0.5 * q * _LOG_2PI
    shift = g_many(mode[None, :])[0]
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        U = rng.standard_normal((m, q))
        B = mode + U @ L.T
        log_prop = log_norm - 0.5 * np.sum(U * U, axis=1)
        w = np.exp(g_many(B) - shift - log_prop)
        total += w.sum()
        total_sq += (w * w).sum()
        done += m
    mean = total / n_draws
    var = max(total_sq / n_draws - mean * mean, 0.0)
    rel_se = math.sqrt(var / n_draws) / mean
    log_value = shift + math.log(mean)
    value = math.exp(log_value) if log_value < 700 else math.inf
    return MonteCarloEstimate(value, rel_se * value, log_value, rel_se)


# ---------------------------------------------------------------------------
# prior functionals and conjugate updates
# ---------------------------------------------------------------------------


def oracle_prior_sparsity(h, k, i, n_draws=10**6, rng=None):
    """Forward-simulate the composite indicator from the priors; returns (mean, se)."""
    if n_draws < 10**4:
        raise InvalidParam("n_draws must be at least 1e4")
    rng = rng or make_rng(0)
    pi_k = rng.beta(h.a_cov[k], h.b_cov[k], n_draws)
    gamma = rng.random(n_draws) < pi_k
    pi_i = rng.beta(h.a_node[i], h.b_node[i], n_draws)
    delta = rng.random(n_draws) < pi_i
    comp = (pi_k >= h.d_cov[k]) & gamma & delta
    mean = float(comp.mean())
    return mean, math.sqrt(mean * (1.0 - mean) / n_draws)


@dataclass
class MomentCheck:
    kind: str
    mean: float
    var: float
    se: float
    analytic_mean: float
    analytic_var: float

    @property
    def z(self):
        return (self.mean - self.analytic_mean) / self.se if self.se > 0 else 0.0


def _frozen_state(p, q, n_obs):
    return SamplerState(
        gamma=np.zeros((p, p, q), np.int8), tau_tilde=np.zeros((p, p, q)),
        tau=np.zeros((p, p, q)), pi_cov=np.full(q, 0.5), delta_cov=np.ones(q, np.int8),
        delta_node=np.zeros((p, p), np.int8), b_latent=np.zeros((p, p, q)),
        pi_node=np.full(p, 0.5), beta=np.zeros((p, p, q)), sigma2=np.ones(p),
        s2=np.ones(q), t_arr=np.ones(1), fitted=np.zeros((p, n_obs)),
    )


def _beta_moments(a, b):
    return a / (a + b), a * b / ((a + b) ** 2 * (a + b + 1))


def _invgamma_moments(shape, rate):
    var = rate**2 / ((shape - 1) ** 2 * (shape - 2)) if shape > 2 else math.inf
    return rate / (shape - 1), var


def oracle_conjugate_moments(kind, inputs, n_draws=10**5, rng=None):
    """Repeat one conjugate Gibbs update with everything else frozen.

    ``kind`` and ``inputs``:

    * ``"pi_cov"``: p, a, b, n_gamma
    * ``"pi_node"``: p, a, b, n_delta
    * ``"sigma2"``: resid (length-N vector), a_sigma, b_sigma
    * ``"s2"``: n_gamma, sum_tau2, t
    * ``"t"``: s2 (vector), optionally a_t, b_t
    """
    rng = rng or make_rng(0)
    draws = np.empty(n_draws)
    if kind == "pi_cov":
        p, a, b, n = inputs["p"], inputs["a"], inputs["b"], int(inputs["n_gamma"])
        st = _frozen_state(p, 1, 1)
        pairs = [(i, j) for i in range(p) for j in range(p) if i != j][:n]
        for i, j in pairs:
            st.gamma[i, j, 0] = 1
        h = HyperParams(a_cov=[a], b_cov=[b], d_cov=[0.0], a_node=np.ones(p), b_node=np.ones(p))
        data = Dataset(np.zeros((1, p)), np.ones((1, 1)))
        design = gibbs.make_design(data)
        for r in range(n_draws):
            gibbs.update_pi_cov(st, design, h, rng, 0)
            draws[r] = st.pi_cov[0]
        am, av = _beta_moments(a + n, b + p * (p - 1) - n)
    elif kind == "pi_node":
        p, a, b, n = inputs["p"], inputs["a"], inputs["b"], int(inputs["n_delta"])
        st = _frozen_state(p, 1, 1)
        st.delta_node[0, 1 : 1 + n] = 1
        h = HyperParams(a_cov=[1.0], b_cov=[1.0], d_cov=[0.0],
                        a_node=np.full(p, a), b_node=np.full(p, b))
        for r in range(n_draws):
            gibbs.update_pi_node(st, h, rng, 0)
            draws[r] = st.pi_node[0]
        am, av = _beta_moments(a + n, b + p - 1 - n)
    elif kind == "sigma2":
        resid = np.asarray(inputs["resid"], dtype=float)
        n_obs = resid.size
        y = np.zeros((n_obs, 2))
        y[:, 0] = resid - resid.mean()
        data = Dataset(y, np.ones((n_obs, 1)))
        st = _frozen_state(2, 1, n_obs)
        st.fitted[0] = y[:, 0] - resid
        h = HyperParams.default(2, 1, a_sigma=inputs["a_sigma"], b_sigma=inputs["b_sigma"])
        design = gibbs.make_design(data)
        for r in range(n_draws):
            gibbs.update_sigma2(st, design, h, rng, 0)
            draws[r] = st.sigma2[0]
        am, av = _invgamma_moments(n_obs / 2 + inputs["a_sigma"],
                                   resid @ resid / 2 + inputs["b_sigma"])
    elif kind == "s2":
        n, ss, t = int(inputs["n_gamma"]), float(inputs["sum_tau2"]), float(inputs["t"])
        p = 2
        while p * (p - 1) < max(n, 1):
            p += 1
        st = _frozen_state(p, 1, 1)
        pairs = [(i, j) for i in range(p) for j in range(p) if i != j][:n]
        for i, j in pairs:
            st.gamma[i, j, 0] = 1
            st.tau_tilde[i, j, 0] = math.sqrt(ss / n)
        st.t = t
        for r in range(n_draws):
            gibbs._k_s2(st.gamma, st.tau_tilde, st.s2, st.t_arr, rng)
            draws[r] = st.s2[0]
        am, av = _invgamma_moments(1 + n / 2, t + ss / 2)
    elif kind == "t":
        s2 = np.asarray(inputs["s2"], dtype=float)
        q = s2.size
        a_t, b_t = float(inputs.get("a_t", 0.0)), float(inputs.get("b_t", 0.0))
        h = HyperParams.default(2, q, a_t=a_t, b_t=b_t)
        st = _frozen_state(2, q, 1)
        st.s2[:] = s2
        for r in range(n_draws):
            gibbs.update_t(st, h, rng)
            draws[r] = st.t
        shape = q + (1.0 if h.flat_t_prior else a_t)
        rate = b_t + float(np.sum(1.0 / s2))
        am, av = shape / rate, shape / rate**2
    else:
        raise InvalidParam(f"unknown conjugate update {kind!r}")
    var = float(draws.var(ddof=1))
    return MomentCheck(kind, float(draws.mean()), var, math.sqrt(var / n_draws), am, av)


# ---------------------------------------------------------------------------
# random configurations and the validation suite
# ---------------------------------------------------------------------------


def random_cov_config(rng):
    """A random covariate-level instance spanning wide variance scales."""
    n = int(rng.integers(1, 21))
    sigma2 = 10.0 ** rng.uniform(-3, 3)
    s2 = 10.0 ** rng.uniform(-3, 3)
    b = rng.normal() * 10.0 ** rng.uniform(-1, 1)
    design = rng.normal(size=n)
    # plant a coefficient of random sign and size so m/nu covers a wide range
    tau0 = rng.normal() * math.sqrt(s2) * 10.0 ** rng.uniform(-1, 1)
    resid = tau0 * b * design + math.sqrt(sigma2) * rng.normal(size=n)
    return dict(resid=resid, design=design, b=b, sigma2=sigma2, s2=s2)


def random_node_config(rng, q):
    n = int(rng.integers(q, q + 15))
    sigma2 = 10.0 ** rng.uniform(-1, 1)
    tau = np.abs(rng.normal(size=q)) * 10.0 ** rng.uniform(-1, 0.5)
    X = rng.normal(size=(n, q))
    XV = X * tau
    b0 = rng.normal(size=q)
    Z = XV @ b0 + math.sqrt(sigma2) * rng.normal(size=n)
    return dict(Z=Z, XV=XV, sigma2=sigma2)


@dataclass
class Check:
    name: str
    n_cases: int
    max_error: float
    tolerance: float
    metric: str
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.max_error <= self.tolerance)

    def row(self):
        return {
            "name": self.name,
            "n_cases": self.n_cases,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "metric": self.metric,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
        }


def check_cov_ratio(seed=0, n_configs=100):
    rng = make_rng(seed, 101)
    worst = 0.0
    max_z = 0.0
    for _ in range(n_configs):
        c = random_cov_config(rng)
        nu2, m, closed = gibbs.covariate_bayes_terms(c["resid"], c["design"], c["b"],
                                                     c["sigma2"], c["s2"])
        ref = oracle_cov_bayes_ratio(c["resid"], c["design"], c["b"], c["sigma2"], c["s2"],
                                     log=True)
        worst = max(worst, abs(math.expm1(ref - closed)))
        max_z = max(max_z, abs(m) / math.sqrt(nu2))
    return worst, max_z


def check_node_ratio_quadrature(seed=0, n_configs=66):
    rng = make_rng(seed, 102)
    worst = 0.0
    for r in range(n_configs):
        c = random_node_config(rng, 1 + r % 2)
        closed, _, _ = gibbs.node_bayes_terms(c["Z"], c["XV"], c["sigma2"])
        ref = oracle_node_bayes_ratio(c["Z"], c["XV"], c["sigma2"], log=True)
        worst = max(worst, abs(math.expm1(ref - closed)))
    return worst


def check_node_ratio_mc(seed=0, n_configs=34, n_draws=10**7):
    rng = make_rng(seed, 103)
    worst = 0.0
    for _ in range(n_configs):
        c = random_node_config(rng, 3)
        closed, _, _ = gibbs.node_bayes_terms(c["Z"], c["XV"], c["sigma2"])
        est = oracle_node_bayes_ratio(c["Z"], c["XV"], c["sigma2"], n_draws=n_draws, rng=rng)
        # relative comparison stays finite even when the ratio itself overflows
        worst = max(worst, abs(math.expm1(closed - est.log_value)) / est.rel_se)
    return worst


PRIOR_SETTINGS = [
    (a_k, b_k, a_i, b_i, d)
    for (a_k, b_k, a_i, b_i) in [(1, 1, 1, 1), (2, 5, 1, 1), (0.5, 0.5, 3, 2), (5, 1, 1, 4), (1, 9, 2, 2)]
    for d in (0.0, 0.05, 0.5, 1.0)
]


def check_prior_sparsity(seed=0, n_draws=10**6):
    rng = make_rng(seed, 104)
    worst = 0.0
    for a_k, b_k, a_i, b_i, d in PRIOR_SETTINGS:
        h = HyperParams(a_cov=[a_k], b_cov=[b_k], d_cov=[d], a_node=[a_i, a_i], b_node=[b_i, b_i])
        exact = prior_inclusion_probability(h, 0, 0)
        mc, _ = oracle_prior_sparsity(h, 0, 0, n_draws, rng)
        if d == 1.0:
            err = math.inf if (exact != 0 or mc != 0) else 0.0
        else:
            se = math.sqrt(exact * (1 - exact) / n_draws)
            err = abs(mc - exact) / se
        worst = max(worst, err)
    return worst


CONJUGATE_CASES = [
    ("pi_cov", dict(p=3, a=1.0, b=1.0, n_gamma=2)),
    ("pi_cov", dict(p=25, a=1.0, b=1.0, n_gamma=40)),
    ("pi_node", dict(p=4, a=1.0, b=1.0, n_delta=3)),
    ("pi_node", dict(p=3, a=2.0, b=3.0, n_delta=1)),
    ("sigma2", dict(resid=[1.0, -1.0], a_sigma=2.0, b_sigma=1.0)),
    ("sigma2", dict(resid=[0.3, -1.2, 2.0, 0.4, -0.1], a_sigma=1.0, b_sigma=1.0)),
    ("s2", dict(n_gamma=4, sum_tau2=2.0, t=1.0)),
    ("s2", dict(n_gamma=10, sum_tau2=0.7, t=2.5)),
    ("t", dict(s2=[1.0, 2.0])),
    ("t", dict(s2=[0.5, 3.0, 1.2], a_t=2.0, b_t=0.5)),
]


def check_conjugate(seed=0, n_draws=10**5):
    rng = make_rng(seed, 105)
    return max(abs(oracle_conjugate_moments(kind, inp, n_draws, rng).z)
               for kind, inp in CONJUGATE_CASES)


def check_log_inclusion(seed=0, n_cases=10**4):
    rng = make_rng(seed, 106)
    worst = 0.0
    for _ in range(n_cases):
        lr = rng.uniform(-30, 30)
        prior = rng.uniform(1e-6, 1 - 1e-6)
        direct = prior * math.exp(lr) / (prior * math.exp(lr) + 1 - prior)
        worst = max(worst, abs(gibbs.inclusion_probability(lr, prior) - direct))
    return worst


def run_validation(seed=0, quick=False):
    """Run every oracle comparison; returns a list of :class:`Check`."""
    mc_draws = 10**6 if quick else 10**7
    n_prior = 10**5 if quick else 10**6
    n_conj = 10**4 if quick else 10**5
    plan = [
        ("covariate_bayes_ratio", lambda: check_cov_ratio(seed)[0], 100, 1e-6, "relative error"),
        ("node_bayes_ratio_quadrature", lambda: check_node_ratio_quadrature(seed), 66, 1e-6,
         "relative error"),
        ("node_bayes_ratio_monte_carlo", lambda: check_node_ratio_mc(seed, n_draws=mc_draws), 34,
         3.0, "standard errors"),
        ("prior_sparsity", lambda: check_prior_sparsity(seed, n_prior), len(PRIOR_SETTINGS), 3.0,
         "standard errors"),
        ("conjugate_moments", lambda: check_conjugate(seed, n_conj), len(CONJUGATE_CASES), 3.0,
         "standard errors"),
        ("log_inclusion_probability", lambda: check_log_inclusion(seed), 10**4, 1e-12,
         "absolute error"),
    ]
    checks = []
    for name, fn, n, tol, metric in plan:
        t0 = time.perf_counter()
        err = float(fn())
        checks.append(Check(name, n, err, tol, metric, time.perf_counter() - t0))
    return checks
