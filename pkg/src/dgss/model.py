"""Domain types for covariate-dependent graphical regression.

Coefficient arrays are ``(p, p, q)`` numpy arrays indexed ``[i, j, k]``: the
effect of covariate ``k`` on the regression of node ``i`` on node ``j``.
Entries for ordered pairs are stored separately (the fit is asymmetric);
symmetry only enters through the simulation generator and the OR rule.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .distributions import beta_cdf
from .errors import DataError, DimensionMismatch, InvalidParam, NotPositiveDefinite

CENTER_TOL = 1e-8


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Centered outcomes ``y`` (N x p) and covariates ``x`` (N x q)."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        x = np.ascontiguousarray(self.x, dtype=float)
        if y.ndim != 2 or x.ndim != 2:
            raise DimensionMismatch("y and x must be 2-D arrays")
        if y.shape[0] != x.shape[0]:
            raise DimensionMismatch(
                f"y has {y.shape[0]} rows but x has {x.shape[0]}"
            )
        if y.shape[0] < 1 or y.shape[1] < 2 or x.shape[1] < 1:
            raise DimensionMismatch("need N >= 1, p >= 2 and q >= 1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataError("non-finite entries in y or x")
        col_means = y.mean(axis=0)
        if np.max(np.abs(col_means)) > CENTER_TOL:
            raise DataError(
                f"outcome columns must be centered (max |mean| = {np.max(np.abs(col_means)):.3g})"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @classmethod
    def centered(cls, y, x):
        y = np.asarray(y, dtype=float)
        return cls(y - y.mean(axis=0), x)

    @property
    def n_obs(self):
        return self.y.shape[0]

    @property
    def n_nodes(self):
        return self.y.shape[1]

    @property
    def n_covs(self):
        return self.x.shape[1]


def _as_vector(value, length, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise DimensionMismatch(f"{name} must have length {length}")
    return arr


@dataclass
class HyperParams:
    """Prior constants.

    ``a_t = b_t = 0`` selects the flat improper prior on ``t``; any other
    pair is a proper Gamma(a_t, b_t) prior.
    """

    a_cov: np.ndarray
    b_cov: np.ndarray
    d_cov: np.ndarray
    a_node: np.ndarray
    b_node: np.ndarray
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    a_t: float = 0.0
    b_t: float = 0.0

    def __post_init__(self):
        q = np.size(self.a_cov)
        p = np.size(self.a_node)
        self.a_cov = _as_vector(self.a_cov, q, "a_cov")
        self.b_cov = _as_vector(self.b_cov, q, "b_cov")
        self.d_cov = _as_vector(self.d_cov, q, "d_cov")
        self.a_node = _as_vector(self.a_node, p, "a_node")
        self.b_node = _as_vector(self.b_node, p, "b_node")
        for name in ("a_cov", "b_cov", "a_node", "b_node"):
            if np.any(getattr(self, name) <= 0):
                raise InvalidParam(f"{name} must be positive")
        if np.any((self.d_cov < 0) | (self.d_cov > 1)):
            raise InvalidParam("d_cov must lie in [0, 1]")
        if self.a_sigma <= 0 or self.b_sigma <= 0:
            raise InvalidParam("a_sigma and b_sigma must be positive")
        if self.a_t < 0 or self.b_t < 0:
            raise InvalidParam("a_t and b_t must be non-negative")
        if (self.a_t == 0) != (self.b_t == 0):
            raise InvalidParam("a_t and b_t must both be zero (flat prior) or both positive")

    @classmethod
    def default(cls, n_nodes, n_covs, d=0.05, intercept=None, **overrides):
        """Beta(1, 1) participation and node priors with threshold ``d``.

        ``intercept`` is a 0-based covariate index whose threshold is set to
        zero so it is never dropped.
        """
        d_cov = np.full(n_covs, float(d))
        if intercept is not None:
            d_cov[intercept] = 0.0
        kw = dict(
            a_cov=np.ones(n_covs),
            b_cov=np.ones(n_covs),
            d_cov=d_cov,
            a_node=np.ones(n_nodes),
            b_node=np.ones(n_nodes),
        )
        kw.update(overrides)
        return cls(**kw)

    @property
    def n_nodes(self):
        return self.a_node.shape[0]

    @property
    def n_covs(self):
        return self.a_cov.shape[0]

    @property
    def flat_t_prior(self):
        return self.a_t == 0 and self.b_t == 0

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out


@dataclass
class SamplerState:
    """Full parameter state of one Gibbs iteration.

    Indicator arrays are ``int8``.  ``t`` is held in a length-1 array so the
    compiled kernels can update it in place.  ``fitted`` is node-major,
    shape ``(p, N)``: ``fitted[i, n] = sum_{j != i, k} beta[i, j, k] x[n, k] y[n, j]``.
    """

    gamma: np.ndarray
    tau_tilde: np.ndarray
    tau: np.ndarray
    pi_cov: np.ndarray
    delta_cov: np.ndarray
    delta_node: np.ndarray
    b_latent: np.ndarray
    pi_node: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    s2: np.ndarray
    t_arr: np.ndarray
    fitted: np.ndarray = field(repr=False)

    @property
    def t(self):
        return float(self.t_arr[0])

    @t.setter
    def t(self, value):
        self.t_arr[0] = value

    @property
    def n_nodes(self):
        return self.gamma.shape[0]

    @property
    def n_covs(self):
        return self.gamma.shape[2]

    def copy(self):
        return SamplerState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def composite_indicator(self):
        """delta^ij * delta_k * gamma^ij_k as an int8 (p, p, q) array."""
        return (
            self.delta_node[:, :, None] * self.delta_cov[None, None, :] * self.gamma
        ).astype(np.int8)


def offdiag_mask(p):
    return ~np.eye(p, dtype=bool)


def validate_coefficients(beta):
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 3 or beta.shape[0] != beta.shape[1]:
        raise DimensionMismatch("coefficient array must have shape (p, p, q)")
    if not np.all(np.isfinite(beta)):
        raise DataError("non-finite coefficients")
    p = beta.shape[0]
    if np.any(beta[np.arange(p), np.arange(p), :] != 0):
        raise DataError("diagonal coefficients must be zero")
    return beta


def assemble_precision(coefs, diag, x):
    """Omega(x) with ``omega[i, j] = sum_k coefs[i, j, k] x[k]`` and constant diagonal."""
    coefs = validate_coefficients(coefs)
    x = np.asarray(x, dtype=float)
    if x.shape != (coefs.shape[2],):
        raise DimensionMismatch("x must have length q")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite covariate vector")
    omega = coefs @ x
    np.fill_diagonal(omega, float(diag))
    if np.max(np.abs(omega - omega.T), initial=0.0) > 1e-10:
        raise DataError("coefficient slices are not symmetric")
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("precision matrix is not positive definite") from exc
    return omega


def prior_inclusion_probability(h, k, i):
    """Prior mean of the composite indicator for covariate ``k`` on node ``i``."""
    node = h.a_node[i] / (h.a_node[i] + h.b_node[i])
    a, b = h.a_cov[k], h.b_cov[k]
    cov = a / (a + b) * (1.0 - beta_cdf(h.d_cov[k], a + 1.0, b))
    return float(node * cov)


def fitted_from_scratch(data, beta):
    """``(p, N)`` array of linear predictors, recomputed without any cache."""
    p = data.n_nodes
    b = beta * offdiag_mask(p)[:, :, None]
    return np.einsum("ijk,nj,nk->in", b, data.y, data.x)


def regression_residual_ss(data, beta, i):
    """Sum over observations of the squared node-``i`` regression residual."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.n_nodes, data.n_nodes, data.n_covs):
        raise DimensionMismatch("beta does not match the dataset dimensions")
    row = beta[i].copy()
    row[i] = 0.0
    pred = np.einsum("jk,nj,nk->n", row, data.y, data.x)
    resid = data.y[:, i] - pred
    return float(resid @ resid)


def check_invariants(state, data=None, rtol=1e-6):
    """Raise :class:`InvariantViolation` if ``state`` is internally inconsistent."""
    p = state.n_nodes
    diag = np.arange(p)
    if np.any(state.tau_tilde < 0):
        raise InvariantViolation("negative tau_tilde")
    # gamma = 1 with an exactly-zero truncated-normal draw is measure zero;
    # only the converse is a real violation
    if np.any((state.tau_tilde > 0) & (state.gamma == 0)):
        raise InvariantViolation("tau_tilde nonzero where gamma = 0")
    if not np.array_equal(state.tau, state.tau_tilde * state.delta_cov[None, None, :]):
        raise InvariantViolation("tau != tau_tilde * delta_cov")
    expected = state.delta_node[:, :, None] * state.tau * state.b_latent
    if not np.array_equal(state.beta, expected):
        raise InvariantViolation("beta != delta_node * tau * b")
    for name in ("gamma", "tau", "beta", "tau_tilde", "b_latent"):
        if np.any(getattr(state, name)[diag, diag, :] != 0):
            raise InvariantViolation(f"diagonal of {name} is not zero")
    if np.any(state.delta_node[diag, diag] != 0):
        raise InvariantViolation("diagonal of delta_node is not zero")
    if np.any(state.sigma2 <= 0) or np.any(state.s2 <= 0) or state.t <= 0:
        raise InvariantViolation("non-positive variance parameter")
    if data is not None:
        scratch = fitted_from_scratch(data, state.beta)
        scale = max(1.0, float(np.max(np.abs(scratch))))
        err = float(np.max(np.abs(scratch - state.fitted)))
        if err > rtol * scale:
            raise InvariantViolation(f"fitted cache drift {err:.3g} exceeds tolerance")
