"""Synthetic covariate-dependent graphs and the selection metric suite."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import make_rng
from .errors import DegenerateGraph, InvalidParam, PrecisionNotPD
from .model import Dataset, offdiag_mask

log = logging.getLogger(__name__)

MAX_GRAPH_ATTEMPTS = 100
MAX_SHRINKS = 20
SHRINK_FACTOR = 0.9


@dataclass
class SimConfig:
    p: int = 25
    q: int = 10
    n_active_covs: int = 4
    n: int = 500
    sparsity: float = 0.4
    coef_low: float = 0.35
    coef_high: float = 0.5
    seed: int = 0
    n_replicates: int = 50

    def __post_init__(self):
        if not 0.0 <= self.sparsity <= 1.0:
            raise InvalidParam("sparsity must lie in [0, 1]")
        if not 0.0 < self.coef_low < self.coef_high:
            raise InvalidParam("need 0 < coef_low < coef_high")
        if not 1 <= self.n_active_covs <= self.q:
            raise InvalidParam("need 1 <= n_active_covs <= q")
        if self.p < 2 or self.n < 1 or self.n_replicates < 1:
            raise InvalidParam("need p >= 2, n >= 1 and n_replicates >= 1")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class GroundTruth:
    """Symmetric true coefficients; covariate 0 is the intercept.

    ``assignment`` maps each unordered edge ``(i, j)`` with ``i < j`` to its
    covariate.  Active covariates are ``0 .. n_active_covs - 1``.
    """

    beta_true: np.ndarray
    graph_true: np.ndarray
    cov_active: np.ndarray
    assignment: dict = field(default_factory=dict)
    n_shrinks: int = 0
    min_eigenvalue: float = float("nan")

    @property
    def support(self):
        return (self.beta_true != 0).astype(np.int8)


def _draw_graph(cfg, rng):
    p = cfg.p
    for _ in range(MAX_GRAPH_ATTEMPTS):
        upper = np.triu(rng.random((p, p)) < cfg.sparsity, 1)
        if upper.any():
            return upper
    raise DegenerateGraph(
        f"no edges in {MAX_GRAPH_ATTEMPTS} attempts at sparsity {cfg.sparsity}"
    )


def _draw_rows(cfg, rng):
    """Edges, their covariates and the row-rescaled (not yet symmetric) array."""
    p, q = cfg.p, cfg.q
    upper = _draw_graph(cfg, rng)
    ii, jj = np.nonzero(upper)
    covs = rng.integers(0, cfg.n_active_covs, size=ii.size)
    mag = rng.uniform(cfg.coef_low, cfg.coef_high, size=ii.size)
    sign = np.where(rng.random(ii.size) < 0.5, -1.0, 1.0)
    raw = np.zeros((p, p, q))
    # one value per edge in both directions; the row rescale breaks the
    # symmetry and the later averaging restores it
    raw[ii, jj, covs] = sign * mag
    raw[jj, ii, covs] = sign * mag
    row_abs = np.abs(raw).sum(axis=(1, 2))
    scale = np.where(row_abs > 0, 0.5 * row_abs, 1.0)
    return upper, ii, jj, covs, raw / scale[:, None, None]


def generate_truth(cfg, rng):
    """Random graph, edges split across active covariates, row-rescaled then symmetrized."""
    upper, ii, jj, covs, rescaled = _draw_rows(cfg, rng)
    beta = 0.5 * (rescaled + rescaled.transpose(1, 0, 2))
    graph = (upper | upper.T).astype(np.int8)
    cov_active = np.zeros(cfg.q, dtype=np.int8)
    cov_active[np.unique(covs)] = 1
    assignment = {(int(i), int(j)): int(k) for i, j, k in zip(ii, jj, covs)}
    return GroundTruth(beta, graph, cov_active, assignment)


def draw_covariates(n, q, rng):
    x = np.empty((n, q))
    x[:, 0] = 1.0
    x[:, 1:] = rng.random((n, q - 1))
    return x


def _precisions(beta, x):
    omega = np.einsum("ijk,nk->nij", beta, x)
    d = np.arange(beta.shape[0])
    omega[:, d, d] = 1.0
    return omega


def generate_dataset(truth, cfg, rng, x=None):
    """Draw ``y_n ~ N(0, Omega(x_n)^-1)`` and center the columns.

    Returns ``(dataset, truth)``; the returned truth carries any shrinkage
    applied to make every ``Omega(x_n)`` positive definite, the number of
    shrink rounds and the smallest eigenvalue seen.
    """
    n, p = cfg.n, cfg.p
    if x is None:
        x = draw_covariates(n, cfg.q, rng)
    beta = truth.beta_true
    for shrinks in range(MAX_SHRINKS + 1):
        omega = _precisions(beta, x)
        try:
            chol = np.linalg.cholesky(omega)
            break
        except np.linalg.LinAlgError:
            beta = beta * SHRINK_FACTOR
    else:
        raise PrecisionNotPD(f"precision not positive definite after {MAX_SHRINKS} shrinks")
    if shrinks:
        log.info("shrank coefficients %d times to restore positive definiteness", shrinks)
    min_eig = float(np.linalg.eigvalsh(omega).min())
    # y = L^{-T} z has covariance (L L^T)^{-1} = Omega^{-1}
    z = rng.standard_normal((n, p))
    y = np.linalg.solve(np.transpose(chol, (0, 2, 1)), z[:, :, None])[:, :, 0]
    data = Dataset.centered(y, x)
    eff = GroundTruth(beta, truth.graph_true, truth.cov_active, truth.assignment,
                      shrinks, min_eig)
    return data, eff


def simulate_replicate(cfg, replicate):
    """Truth and data for one replicate, drawn from its own RNG stream."""
    rng = make_rng(cfg.seed, replicate)
    truth = generate_truth(cfg, rng)
    return generate_dataset(truth, cfg, rng)


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float
    fpr: float
    f1: float
    mcc: float
    mcc_defined: bool

    def row(self):
        return {
            "tpr": self.tpr,
            "fpr": self.fpr,
            "f1": self.f1,
            "mcc": self.mcc,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def classification_metrics(truth, estimate):
    """TPR, FPR, F1 and MCC of a binary estimate against a binary truth.

    MCC is NaN with ``mcc_defined=False`` when any marginal count is zero.
    """
    t = np.asarray(truth).astype(bool).ravel()
    e = np.asarray(estimate).astype(bool).ravel()
    if t.shape != e.shape:
        raise InvalidParam("truth and estimate must have the same shape")
    tp = int(np.sum(t & e))
    fp = int(np.sum(~t & e))
    tn = int(np.sum(~t & ~e))
    fn = int(np.sum(t & ~e))
    denom = float(tp + fp) * float(tp + fn) * float(tn + fp) * float(tn + fn)
    defined = denom > 0
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if defined else float("nan")
    return Metrics(
        tp, fp, tn, fn,
        tpr=_ratio(tp, tp + fn),
        fpr=_ratio(fp, fp + tn),
        f1=_ratio(tp, tp + 0.5 * (fp + fn)),
        mcc=mcc,
        mcc_defined=defined,
    )


TASKS = ("edge_covariate", "overall_graph", "covariate")


def evaluate_tasks(truth, report, unordered=False):
    """Metric rows for covariate-dependent edges, the overall graph and covariates.

    Edges are scored over ordered pairs by default; ``unordered=True`` scores
    only ``i < j``.
    """
    p = truth.graph_true.shape[0]
    if unordered:
        mask = np.triu(np.ones((p, p), dtype=bool), 1)
    else:
        mask = offdiag_mask(p)
    support = truth.support
    return {
        "edge_covariate": classification_metrics(support[mask], report.edge_cov[mask]),
        "overall_graph": classification_metrics(
            truth.graph_true[mask], report.overall_graph[mask]
        ),
        "covariate": classification_metrics(truth.cov_active, report.covariates_selected),
    }
