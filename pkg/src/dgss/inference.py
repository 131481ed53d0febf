"""Posterior summaries: median-probability thresholding and the OR rule."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyChain, InvalidParam

DEFAULT_CUTOFF = 0.5


@dataclass(frozen=True)
class MppiArray:
    """Post-burn-in inclusion frequencies of the composite indicators."""

    values: np.ndarray
    n_samples: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise DimensionMismatch("mppi must have shape (p, p, q)")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise InvalidParam("mppi values must lie in [0, 1]")
        d = np.arange(v.shape[0])
        if np.any(v[d, d, :] != 0):
            raise InvalidParam("diagonal mppi entries must be zero")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class SelectionReport:
    kappa: np.ndarray
    edge_cov: np.ndarray
    overall_graph: np.ndarray
    covariates_selected: np.ndarray
    beta_sparse: np.ndarray = None

    @property
    def edges_per_cov(self):
        """Unordered-pair edge count for each covariate."""
        iu = np.triu_indices(self.edge_cov.shape[0], 1)
        return self.edge_cov[iu].sum(axis=0).astype(int)

    @property
    def n_edges(self):
        """Unordered edges in the overall graph."""
        return int(np.triu(self.overall_graph, 1).sum())

    @property
    def n_ordered_edges(self):
        return int(self.overall_graph.sum())

    def counts(self):
        return {
            "edges_per_covariate": self.edges_per_cov.tolist(),
            "edges_per_covariate_ordered": self.edge_cov.sum(axis=(0, 1)).astype(int).tolist(),
            "total_edges": self.n_edges,
            "total_edges_ordered": self.n_ordered_edges,
            "covariate_edges": int(self.edges_per_cov.sum()),
            "n_covariates_selected": int(self.covariates_selected.sum()),
        }


def threshold_mppi(mppi, cutoff=DEFAULT_CUTOFF):
    """Strict threshold: an entry is selected when its MPPI exceeds ``cutoff``."""
    if not 0.0 <= cutoff <= 1.0:
        raise InvalidParam("cutoff must lie in [0, 1]")
    values = mppi.values if isinstance(mppi, MppiArray) else np.asarray(mppi, dtype=float)
    return (values > cutoff).astype(np.int8)


def symmetrize_or(kappa):
    kappa = np.asarray(kappa).astype(np.int8)
    if kappa.ndim != 3 or kappa.shape[0] != kappa.shape[1]:
        raise DimensionMismatch("kappa must have shape (p, p, q)")
    d = np.arange(kappa.shape[0])
    if np.any(kappa[d, d, :] != 0):
        raise InvalidParam("diagonal of kappa must be zero")
    edge_cov = kappa | kappa.transpose(1, 0, 2)
    overall = edge_cov.max(axis=2) if kappa.shape[2] else np.zeros(kappa.shape[:2], np.int8)
    selected = (edge_cov.sum(axis=(0, 1)) > 0).astype(np.int8)
    return SelectionReport(kappa, edge_cov, overall.astype(np.int8), selected)


def summarize(chain, cutoff=DEFAULT_CUTOFF, fdr=False):
    """Threshold and symmetrize a chain's MPPIs; attach the sparse posterior mean."""
    if fdr:
        raise NotImplementedError("Bayesian FDR thresholding is not implemented")
    if chain.mppi.n_samples < 1:
        raise EmptyChain("chain has no post-burn-in samples")
    report = symmetrize_or(threshold_mppi(chain.mppi, cutoff))
    report.beta_sparse = np.where(report.edge_cov == 1, chain.beta_mean, 0.0)
    return report
