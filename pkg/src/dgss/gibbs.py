"""Tuning-free Gibbs sampler for the dual-group spike-and-slab model.

One sweep runs four blocks in a fixed order:

1. covariate level -- for each covariate ``k``: every ordered pair ``(i, j)``
   updates ``(gamma, tau_tilde)`` with ``tau_tilde`` integrated out of the
   inclusion probability, then ``pi_k`` and the threshold indicator
   ``delta_k = 1{pi_k >= d_k}``;
2. node level -- for each node ``i``: every ``j != i`` updates
   ``(delta^ij, b^ij)`` with ``b^ij`` integrated out, then ``pi^i``;
3. error variances ``sigma2``;
4. slab scales ``s2`` followed by their shared rate ``t``.

All inclusion probabilities are computed from log Bayes ratios.  The per-node
linear predictor is cached in ``state.fitted`` and updated by rank-one axpy
steps whenever a coefficient changes.

The conditional updates are numba kernels operating on the state arrays in
place.  The public ``update_*`` functions wrap exactly the kernels that
:func:`run_chain` uses, so tests exercise the production code path.
"""

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .distributions import (
    _beta,
    _gamma,
    _invgamma,
    _log_norm_cdf,
    _truncnorm_pos,
    make_rng,
    sample_bernoulli,
    sample_truncnormal_pos,
)
from .errors import DimensionMismatch, InvalidParam, NotPositiveDefinite, NumericalFailure
from .inference import MppiArray
from .model import Dataset, SamplerState, check_invariants, fitted_from_scratch, offdiag_mask

log = logging.getLogger(__name__)

_LOG2 = math.log(2.0)

_OK = 0
_BAD_VARIANCE = 1
_NOT_PD = 2


@dataclass
class SweepConfig:
    n_iter: int = 20000
    burn_in: int = 10000
    thin: int = 1
    recompute_period: int = 100
    store_betas: bool = False
    check_period: int = 100
    init: str = "prior"

    def __post_init__(self):
        if self.n_iter < 1 or self.burn_in < 0 or self.burn_in >= self.n_iter:
            raise InvalidParam("need 0 <= burn_in < n_iter")
        if self.thin < 1 or self.recompute_period < 1 or self.check_period < 0:
            raise InvalidParam("thin and recompute_period must be >= 1")
        if self.init not in ("prior", "zero"):
            raise InvalidParam("init must be 'prior' or 'zero'")

    @property
    def n_samples(self):
        return len(range(self.burn_in, self.n_iter, self.thin))


@dataclass(frozen=True)
class Design:
    """Sufficient statistics of a dataset laid out for the kernels.

    ``W[j, k, n] = y[n, j] * x[n, k]``, ``yT = y.T`` and ``gram[j] = W[j] @ W[j].T``.
    """

    data: Dataset
    W: np.ndarray
    yT: np.ndarray
    gram: np.ndarray

    @property
    def n_obs(self):
        return self.data.n_obs

    @property
    def n_nodes(self):
        return self.data.n_nodes

    @property
    def n_covs(self):
        return self.data.n_covs


def make_design(data):
    if isinstance(data, Design):
        return data
    W = np.ascontiguousarray(np.einsum("nj,nk->jkn", data.y, data.x))
    yT = np.ascontiguousarray(data.y.T)
    gram = np.ascontiguousarray(np.einsum("jkn,jln->jkl", W, W))
    return Design(data, W, yT, gram)


@dataclass
class ChainOutput:
    mppi: MppiArray
    mppi_node: np.ndarray
    mppi_cov: np.ndarray
    beta_mean: np.ndarray
    traces: dict
    seed: int = 0
    chain_id: int = 0
    cache_drift: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_state: SamplerState = None
    beta_samples: np.ndarray = None

    @property
    def n_samples(self):
        return self.mppi.n_samples

    def identical_to(self, other):
        """Bitwise equality of every stored array."""
        pairs = [
            (self.mppi.values, other.mppi.values),
            (self.mppi_node, other.mppi_node),
            (self.mppi_cov, other.mppi_cov),
            (self.beta_mean, other.beta_mean),
            (self.cache_drift, other.cache_drift),
        ]
        if self.traces.keys() != other.traces.keys():
            return False
        pairs += [(self.traces[k], other.traces[k]) for k in self.traces]
        return self.n_samples == other.n_samples and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs
        )


# ---------------------------------------------------------------------------
# closed-form pieces shared by the kernels and the public API
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _inclusion_prob(log_ratio, prior):
    """pi R / (pi R + 1 - pi) evaluated on the log-odds scale."""
    if prior <= 0.0:
        return 0.0
    if prior >= 1.0:
        return 1.0
    log_odds = math.log(prior) - math.log1p(-prior) + log_ratio
    if log_odds >= 0.0:
        return 1.0 / (1.0 + math.exp(-log_odds))
    e = math.exp(log_odds)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _cov_posterior(sum_dd, sum_dr, b, sigma2, s2):
    prec = b * b * sum_dd / sigma2 + 1.0 / s2
    nu2 = 1.0 / prec
    m = nu2 * b * sum_dr / sigma2
    return nu2, m


@numba.njit(cache=True)
def _cov_log_ratio(m, nu2, s2):
    return (
        _LOG2
        - 0.5 * math.log(s2)
        + 0.5 * math.log(nu2)
        + 0.5 * m * m / nu2
        + _log_norm_cdf(m / math.sqrt(nu2))
    )


@numba.njit(cache=True)
def _cholesky_inplace(A, L):
    q = A.shape[0]
    for r in range(q):
        for c in range(r + 1):
            s = A[r, c]
            for m in range(c):
                s -= L[r, m] * L[c, m]
            if r == c:
                if not s > 0.0:
                    return False
                L[r, r] = math.sqrt(s)
            else:
                L[r, c] = s / L[c, c]
        for c in range(r + 1, q):
            L[r, c] = 0.0
    return True


@numba.njit(cache=True)
def _node_posterior(xtx, xtz, sigma2, A, L, u):
    """Factor ``A = xtx / sigma2 + I`` and solve ``L u = xtz / sigma2``.

    Returns ``(ok, log_ratio)`` where the log Bayes ratio is
    ``0.5 log|A^-1| + 0.5 mu' A mu = -sum log L_kk + 0.5 u'u``.
    """
    q = xtx.shape[0]
    for r in range(q):
        for c in range(q):
            A[r, c] = xtx[r, c] / sigma2
        A[r, r] += 1.0
    if not _cholesky_inplace(A, L):
        return False, 0.0
    logdet = 0.0
    quad = 0.0
    for r in range(q):
        s = xtz[r] / sigma2
        for c in range(r):
            s -= L[r, c] * u[c]
        u[r] = s / L[r, r]
        logdet += math.log(L[r, r])
        quad += u[r] * u[r]
    return True, -logdet + 0.5 * quad


@numba.njit(cache=True)
def _back_solve_upper(L, u, out):
    # solves L' out = u for lower-triangular L
    q = L.shape[0]
    for r in range(q - 1, -1, -1):
        s = u[r]
        for c in range(r + 1, q):
            s -= L[c, r] * out[c]
        out[r] = s / L[r, r]


# ---------------------------------------------------------------------------
# update kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _k_cov_entry(i, j, k, yT, W, gram, gamma, tau_tilde, tau, b_latent, beta,
                 delta_node, delta_cov, pi_cov, sigma2, s2, fitted, rng):
    if not (s2[k] > 0.0 and sigma2[i] > 0.0):
        return _BAD_VARIANCE
    w = W[j, k]
    N = w.shape[0]
    old = beta[i, j, k]
    bij = b_latent[i, j, k]
    sdd = gram[j, k, k]
    sdr = 0.0
    if bij != 0.0:
        # sum_n w_n * (y^i_n - c1_n - c2_n), the cache holds every other term
        for n in range(N):
            sdr += w[n] * (yT[i, n] - fitted[i, n])
        sdr += old * sdd
    nu2, m = _cov_posterior(sdd, sdr, bij, sigma2[i], s2[k])
    if not (nu2 > 0.0 and math.isfinite(m)):
        return _BAD_VARIANCE
    prob = _inclusion_prob(_cov_log_ratio(m, nu2, s2[k]), pi_cov[k])
    if rng.random() < prob:
        gamma[i, j, k] = 1
        tt = _truncnorm_pos(rng, m, math.sqrt(nu2))
    else:
        gamma[i, j, k] = 0
        tt = 0.0
    tau_tilde[i, j, k] = tt
    tau[i, j, k] = tt * delta_cov[k]
    new = delta_node[i, j] * tau[i, j, k] * bij
    if new != old:
        diff = new - old
        for n in range(N):
            fitted[i, n] += diff * w[n]
        beta[i, j, k] = new
    return _OK


@numba.njit(cache=True)
def _k_pi_cov(k, a_cov, b_cov, d_cov, W, gamma, tau_tilde, tau, b_latent, beta,
              delta_node, delta_cov, pi_cov, fitted, rng):
    p = gamma.shape[0]
    N = W.shape[2]
    s = 0
    for i in range(p):
        for j in range(p):
            if i != j:
                s += gamma[i, j, k]
    pik = _beta(rng, a_cov[k] + s, b_cov[k] + p * (p - 1) - s)
    pi_cov[k] = pik
    dk = 1 if pik >= d_cov[k] else 0
    if dk == delta_cov[k]:
        return
    delta_cov[k] = dk
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            tau[i, j, k] = tau_tilde[i, j, k] * dk
            new = delta_node[i, j] * tau[i, j, k] * b_latent[i, j, k]
            old = beta[i, j, k]
            if new != old:
                diff = new - old
                for n in range(N):
                    fitted[i, n] += diff * W[j, k, n]
                beta[i, j, k] = new


@numba.njit(cache=True)
def _k_node_pair(i, j, yT, W, gram, tau, b_latent, beta, delta_node, pi_node,
                 sigma2, fitted, rng, xtx, xtz, A, L, u, bnew):
    q = tau.shape[2]
    N = W.shape[2]
    active = False
    for k in range(q):
        if tau[i, j, k] != 0.0:
            active = True
    if active:
        # W_j' Z with Z = y^i minus every pair other than (i, j)
        for k in range(q):
            c = 0.0
            for n in range(N):
                c += W[j, k, n] * (yT[i, n] - fitted[i, n])
            for l in range(q):
                c += gram[j, k, l] * beta[i, j, l]
            xtz[k] = tau[i, j, k] * c
        for k in range(q):
            for l in range(q):
                xtx[k, l] = tau[i, j, k] * gram[j, k, l] * tau[i, j, l]
    else:
        xtx[:, :] = 0.0
        xtz[:] = 0.0
    ok, log_ratio = _node_posterior(xtx, xtz, sigma2[i], A, L, u)
    if not ok:
        return _NOT_PD
    if rng.random() < _inclusion_prob(log_ratio, pi_node[i]):
        delta_node[i, j] = 1
        for k in range(q):
            u[k] += rng.standard_normal()
        _back_solve_upper(L, u, bnew)
    else:
        delta_node[i, j] = 0
        bnew[:] = 0.0
    for k in range(q):
        b_latent[i, j, k] = bnew[k]
        new = delta_node[i, j] * tau[i, j, k] * bnew[k]
        old = beta[i, j, k]
        if new != old:
            diff = new - old
            for n in range(N):
                fitted[i, n] += diff * W[j, k, n]
            beta[i, j, k] = new
    return _OK


@numba.njit(cache=True)
def _k_pi_node(i, a_node, b_node, delta_node, pi_node, rng):
    p = delta_node.shape[0]
    s = 0
    for j in range(p):
        if j != i:
            s += delta_node[i, j]
    pi_node[i] = _beta(rng, a_node[i] + s, b_node[i] + (p - 1) - s)


@numba.njit(cache=True)
def _k_sigma2(i, a_sigma, b_sigma, yT, fitted, sigma2, rng):
    N = yT.shape[1]
    ss = 0.0
    for n in range(N):
        r = yT[i, n] - fitted[i, n]
        ss += r * r
    sigma2[i] = _invgamma(rng, 0.5 * N + a_sigma, 0.5 * ss + b_sigma)


@numba.njit(cache=True)
def _k_s2(gamma, tau_tilde, s2, t_arr, rng):
    p = gamma.shape[0]
    q = gamma.shape[2]
    for k in range(q):
        sg = 0.0
        st = 0.0
        for i in range(p):
            for j in range(p):
                if i != j and gamma[i, j, k] == 1:
                    sg += 1.0
                    st += tau_tilde[i, j, k] * tau_tilde[i, j, k]
        s2[k] = _invgamma(rng, 1.0 + 0.5 * sg, t_arr[0] + 0.5 * st)


@numba.njit(cache=True)
def _k_t(s2, t_arr, t_shape_extra, b_t, rng):
    inv_sum = 0.0
    for k in range(s2.shape[0]):
        inv_sum += 1.0 / s2[k]
    t_arr[0] = _gamma(rng, s2.shape[0] + t_shape_extra, b_t + inv_sum)


@numba.njit(cache=True)
def _k_sweep(yT, W, gram, a_cov, b_cov, d_cov, a_node, b_node, a_sigma, b_sigma,
             t_shape_extra, b_t, gamma, tau_tilde, tau, pi_cov, delta_cov,
             delta_node, b_latent, pi_node, beta, sigma2, s2, t_arr, fitted, rng):
    p = gamma.shape[0]
    q = gamma.shape[2]
    for k in range(q):
        for i in range(p):
            for j in range(p):
                if i == j:
                    continue
                st = _k_cov_entry(i, j, k, yT, W, gram, gamma, tau_tilde, tau,
                                  b_latent, beta, delta_node, delta_cov, pi_cov,
                                  sigma2, s2, fitted, rng)
                if st != _OK:
                    return st
        _k_pi_cov(k, a_cov, b_cov, d_cov, W, gamma, tau_tilde, tau, b_latent,
                  beta, delta_node, delta_cov, pi_cov, fitted, rng)
    xtx = np.empty((q, q))
    A = np.empty((q, q))
    L = np.empty((q, q))
    xtz = np.empty(q)
    u = np.empty(q)
    bnew = np.empty(q)
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            st = _k_node_pair(i, j, yT, W, gram, tau, b_latent, beta, delta_node,
                              pi_node, sigma2, fitted, rng, xtx, xtz, A, L, u, bnew)
            if st != _OK:
                return st
        _k_pi_node(i, a_node, b_node, delta_node, pi_node, rng)
    for i in range(p):
        _k_sigma2(i, a_sigma, b_sigma, yT, fitted, sigma2, rng)
    _k_s2(gamma, tau_tilde, s2, t_arr, rng)
    _k_t(s2, t_arr, t_shape_extra, b_t, rng)
    return _OK


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def inclusion_probability(log_ratio, prior):
    """Posterior probability of inclusion given a log Bayes ratio and prior odds."""
    return float(_inclusion_prob(float(log_ratio), float(prior)))


def covariate_bayes_terms(resid, design_col, b, sigma2, s2):
    """Posterior ``(nu2, m, log_ratio)`` for one local indicator.

    ``resid`` is the partial residual ``y^{ijk}`` and ``design_col`` the
    column ``y^j * x^k``; ``log_ratio`` is the log of the marginal-likelihood
    ratio (slab over spike) with ``tau_tilde`` integrated out.
    """
    resid = np.asarray(resid, dtype=float)
    design_col = np.asarray(design_col, dtype=float)
    nu2, m = _cov_posterior(float(design_col @ design_col), float(design_col @ resid),
                            float(b), float(sigma2), float(s2))
    return nu2, m, float(_cov_log_ratio(m, nu2, float(s2)))


def node_bayes_terms(Z, XV, sigma2):
    """Posterior ``(log_ratio, mu, Sigma)`` for one node-level group.

    ``XV`` is the ``N x q`` design already scaled by ``diag(tau^ij)``.
    """
    Z = np.asarray(Z, dtype=float)
    XV = np.atleast_2d(np.asarray(XV, dtype=float))
    q = XV.shape[1]
    A = np.empty((q, q))
    L = np.empty((q, q))
    u = np.empty(q)
    ok, log_ratio = _node_posterior(XV.T @ XV, XV.T @ Z, float(sigma2), A, L, u)
    if not ok:
        raise NotPositiveDefinite("node-level posterior precision is not positive definite")
    mu = np.empty(q)
    _back_solve_upper(L, u, mu)
    Linv = np.linalg.inv(L)
    return float(log_ratio), mu, Linv.T @ Linv


def _hyper_args(h):
    extra = 1.0 if h.flat_t_prior else float(h.a_t)
    return (h.a_cov, h.b_cov, h.d_cov, h.a_node, h.b_node, float(h.a_sigma),
            float(h.b_sigma), extra, float(h.b_t))


def update_covariate_level(state, data, h, rng, i, j, k):
    """Resample ``(gamma^ij_k, tau_tilde^ij_k)`` and refresh ``beta^ij_k``."""
    if i == j:
        raise InvalidParam("i and j must differ")
    d = make_design(data)
    st = _k_cov_entry(i, j, k, d.yT, d.W, d.gram, state.gamma, state.tau_tilde,
                      state.tau, state.b_latent, state.beta, state.delta_node,
                      state.delta_cov, state.pi_cov, state.sigma2, state.s2,
                      state.fitted, rng)
    if st != _OK:
        raise NumericalFailure("non-positive posterior variance in covariate-level update")


def update_pi_cov(state, data, h, rng, k):
    """Draw ``pi_k``, set ``delta_k`` and propagate a flip into ``tau`` and ``beta``."""
    d = make_design(data)
    _k_pi_cov(k, h.a_cov, h.b_cov, h.d_cov, d.W, state.gamma, state.tau_tilde,
              state.tau, state.b_latent, state.beta, state.delta_node,
              state.delta_cov, state.pi_cov, state.fitted, rng)


def update_node_level(state, data, h, rng, i, j):
    """Resample ``(delta^ij, b^ij)`` and set ``B^ij = diag(tau^ij) b^ij``."""
    if i == j:
        raise InvalidParam("i and j must differ")
    d = make_design(data)
    q = d.n_covs
    st = _k_node_pair(i, j, d.yT, d.W, d.gram, state.tau, state.b_latent, state.beta,
                      state.delta_node, state.pi_node, state.sigma2, state.fitted,
                      rng, np.empty((q, q)), np.empty(q), np.empty((q, q)),
                      np.empty((q, q)), np.empty(q), np.empty(q))
    if st != _OK:
        raise NotPositiveDefinite("node-level posterior precision is not positive definite")


def update_pi_node(state, h, rng, i):
    _k_pi_node(i, h.a_node, h.b_node, state.delta_node, state.pi_node, rng)


def update_sigma2(state, data, h, rng, i):
    d = make_design(data)
    _k_sigma2(i, float(h.a_sigma), float(h.b_sigma), d.yT, state.fitted, state.sigma2, rng)


def update_s2_t(state, h, rng):
    """Draw every ``s2_k`` and then ``t``."""
    _k_s2(state.gamma, state.tau_tilde, state.s2, state.t_arr, rng)
    update_t(state, h, rng)


def update_t(state, h, rng):
    """Draw ``t`` alone given the current ``s2``."""
    extra = 1.0 if h.flat_t_prior else float(h.a_t)
    _k_t(state.s2, state.t_arr, extra, float(h.b_t), rng)


def sweep(state, data, h, rng):
    """One full Gibbs sweep in the fixed block order."""
    d = make_design(data)
    st = _k_sweep(d.yT, d.W, d.gram, *_hyper_args(h), state.gamma, state.tau_tilde,
                  state.tau, state.pi_cov, state.delta_cov, state.delta_node,
                  state.b_latent, state.pi_node, state.beta, state.sigma2, state.s2,
                  state.t_arr, state.fitted, rng)
    if st == _BAD_VARIANCE:
        raise NumericalFailure("non-positive posterior variance in covariate-level update")
    if st == _NOT_PD:
        raise NotPositiveDefinite("node-level posterior precision is not positive definite")


def initial_state(data, h, rng, init="prior"):
    """Starting point for a chain.

    ``init="prior"`` draws indicators as fair coins, ``tau_tilde`` from the
    half-normal and ``b`` from N(0, 1) where active.  ``init="zero"`` starts
    from the empty model.  Both set ``pi = 0.5``, ``s2 = t = 1`` and
    ``sigma2`` to the per-node sample variance.
    """
    data = make_design(data).data
    p, q = data.n_nodes, data.n_covs
    off = offdiag_mask(p)
    if h.n_nodes != p or h.n_covs != q:
        raise DimensionMismatch("hyperparameters do not match the dataset dimensions")
    if init == "prior":
        gamma = sample_bernoulli(rng, 0.5, size=(p, p, q)) * off[:, :, None]
        tau_tilde = np.where(gamma == 1, sample_truncnormal_pos(rng, 0.0, 1.0, size=(p, p, q)), 0.0)
        delta_node = sample_bernoulli(rng, 0.5, size=(p, p)) * off
        b_latent = np.where(delta_node[:, :, None] == 1, rng.standard_normal((p, p, q)), 0.0)
    elif init == "zero":
        gamma = np.zeros((p, p, q), dtype=np.int8)
        tau_tilde = np.zeros((p, p, q))
        delta_node = np.zeros((p, p), dtype=np.int8)
        b_latent = np.zeros((p, p, q))
    else:
        raise InvalidParam("init must be 'prior' or 'zero'")
    gamma = gamma.astype(np.int8)
    delta_node = delta_node.astype(np.int8)
    pi_cov = np.full(q, 0.5)
    delta_cov = (pi_cov >= h.d_cov).astype(np.int8)
    tau = tau_tilde * delta_cov[None, None, :]
    beta = delta_node[:, :, None] * tau * b_latent
    var = np.mean(data.y**2, axis=0)
    sigma2 = np.where(var > 0, var, 1.0)
    state = SamplerState(
        gamma=gamma, tau_tilde=tau_tilde, tau=tau, pi_cov=pi_cov,
        delta_cov=delta_cov, delta_node=delta_node, b_latent=b_latent,
        pi_node=np.full(p, 0.5), beta=beta, sigma2=sigma2, s2=np.ones(q),
        t_arr=np.ones(1), fitted=np.zeros((p, data.n_obs)),
    )
    state.fitted = np.ascontiguousarray(fitted_from_scratch(data, beta))
    return state


def run_chain(data, h, cfg=None, seed=0, chain_id=0, state=None, progress=None):
    """Run one chain and accumulate posterior summaries after burn-in.

    The chain draws from stream ``chain_id`` of ``seed``; identical
    arguments give bitwise-identical output.  ``progress`` is an optional
    callable receiving the sweep index.
    """
    cfg = cfg or SweepConfig()
    design = make_design(data)
    data = design.data
    p, q, N = data.n_nodes, data.n_covs, data.n_obs
    rng = make_rng(seed, chain_id)
    if state is None:
        state = initial_state(design, h, rng, cfg.init)
    hyper = _hyper_args(h)
    off = offdiag_mask(p)

    n_iter = cfg.n_iter
    traces = {
        "pi_cov": np.empty((n_iter, q)),
        "pi_node": np.empty((n_iter, p)),
        "sigma2": np.empty((n_iter, p)),
        "s2": np.empty((n_iter, q)),
        "t": np.empty(n_iter),
        "n_active": np.empty(n_iter, dtype=np.int64),
        "n_node_active": np.empty(n_iter, dtype=np.int64),
        "n_cov_active": np.empty(n_iter, dtype=np.int64),
    }
    mppi = np.zeros((p, p, q))
    mppi_node = np.zeros((p, p))
    mppi_cov = np.zeros(q)
    beta_sum = np.zeros((p, p, q))
    beta_samples = np.empty((cfg.n_samples, p, p, q)) if cfg.store_betas else None
    drift = []
    n_kept = 0

    for it in range(n_iter):
        st = _k_sweep(design.yT, design.W, design.gram, *hyper, state.gamma,
                      state.tau_tilde, state.tau, state.pi_cov, state.delta_cov,
                      state.delta_node, state.b_latent, state.pi_node, state.beta,
                      state.sigma2, state.s2, state.t_arr, state.fitted, rng)
        if st == _BAD_VARIANCE:
            raise NumericalFailure("non-positive posterior variance", sweep=it)
        if st == _NOT_PD:
            raise NotPositiveDefinite("node-level posterior precision not PD", sweep=it)

        if (it + 1) % cfg.recompute_period == 0:
            scratch = fitted_from_scratch(data, state.beta)
            drift.append(float(np.max(np.abs(scratch - state.fitted))))
            state.fitted[:] = scratch
        if cfg.check_period and (it + 1) % cfg.check_period == 0:
            check_invariants(state)

        composite = state.composite_indicator()
        traces["pi_cov"][it] = state.pi_cov
        traces["pi_node"][it] = state.pi_node
        traces["sigma2"][it] = state.sigma2
        traces["s2"][it] = state.s2
        traces["t"][it] = state.t
        traces["n_active"][it] = composite.sum()
        traces["n_node_active"][it] = state.delta_node.sum()
        traces["n_cov_active"][it] = state.delta_cov.sum()

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            mppi += composite
            mppi_node += state.delta_node
            mppi_cov += state.delta_cov
            beta_sum += state.beta
            if beta_samples is not None:
                beta_samples[n_kept] = state.beta
            n_kept += 1
        if progress is not None:
            progress(it)

    mppi /= n_kept
    mppi *= off[:, :, None]
    return ChainOutput(
        mppi=MppiArray(mppi, n_kept),
        mppi_node=mppi_node / n_kept,
        mppi_cov=mppi_cov / n_kept,
        beta_mean=beta_sum / n_kept,
        traces=traces,
        seed=int(seed),
        chain_id=int(chain_id),
        cache_drift=np.asarray(drift),
        final_state=state,
        beta_samples=beta_samples,
    )


def merge_chains(outputs):
    """Pool several chains, weighting each by its number of kept sweeps."""
    outputs = list(outputs)
    if not outputs:
        raise InvalidParam("no chains to merge")
    if len(outputs) == 1:
        return outputs[0]
    w = np.array([o.n_samples for o in outputs], dtype=float)
    total = w.sum()

    def pool(get):
        return sum(wi * get(o) for wi, o in zip(w, outputs)) / total

    traces = {
        key: np.concatenate([o.traces[key] for o in outputs]) for key in outputs[0].traces
    }
    traces["chain"] = np.concatenate(
        [np.full(len(o.traces["t"]), o.chain_id) for o in outputs]
    )
    return ChainOutput(
        mppi=MppiArray(pool(lambda o: o.mppi.values), int(total)),
        mppi_node=pool(lambda o: o.mppi_node),
        mppi_cov=pool(lambda o: o.mppi_cov),
        beta_mean=pool(lambda o: o.beta_mean),
        traces=traces,
        seed=outputs[0].seed,
        chain_id=-1,
        cache_drift=np.concatenate([o.cache_drift for o in outputs]),
    )


def _chain_job(args):
    data, h, cfg, seed, chain_id = args
    return run_chain(data, h, cfg, seed, chain_id)


def run_chains(data, h, cfg, seed, n_chains=1, workers=1):
    """Run ``n_chains`` independent chains, optionally in worker processes."""
    jobs = [(make_design(data).data, h, cfg, seed, c) for c in range(n_chains)]
    if workers <= 1 or n_chains == 1:
        outs = [_chain_job(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_chain_job, jobs))
    return merge_chains(outs)
