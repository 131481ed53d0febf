"""Transforms for abundance counts and covariates prior to fitting."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidInput

DEFAULT_PSEUDOCOUNT = 0.5
DEFAULT_LOG_OFFSET = 1.0


class ConstantColumnWarning(UserWarning):
    pass


@dataclass
class CountTable:
    counts: np.ndarray
    features: list = None
    samples: list = None

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.ndim != 2:
            raise DimensionMismatch("counts must be a 2-D table")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise InvalidInput("counts must be finite and non-negative")
        self.counts = c
        n, p = c.shape
        self.features = list(self.features) if self.features is not None else [f"f{j + 1}" for j in range(p)]
        self.samples = list(self.samples) if self.samples is not None else [f"s{i + 1}" for i in range(n)]
        if len(self.features) != p or len(self.samples) != n:
            raise DimensionMismatch("feature or sample names do not match the table shape")


def clr_transform(table, pseudocount=DEFAULT_PSEUDOCOUNT, center=True):
    """Centered log-ratio per row, then (optionally) column centering."""
    counts = table.counts if isinstance(table, CountTable) else CountTable(table).counts
    if pseudocount < 0:
        raise InvalidInput("pseudocount must be non-negative")
    shifted = counts + pseudocount
    if np.any(shifted <= 0):
        raise InvalidInput("zero counts need a positive pseudocount")
    logs = np.log(shifted)
    z = logs - logs.mean(axis=1, keepdims=True)
    if center:
        z = z - z.mean(axis=0)
    return z


def log_minmax(x, offset=DEFAULT_LOG_OFFSET, strict=False):
    """``log(x + offset)`` rescaled column-wise to [0, 1].

    Returns ``(z, constant)`` where ``constant`` flags columns with zero range;
    those map to zeros (or raise when ``strict``).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch("x must be a 2-D array")
    if offset < 0:
        raise InvalidInput("offset must be non-negative")
    if not np.all(np.isfinite(x)) or np.any(x + offset <= 0):
        raise InvalidInput("x + offset must be finite and positive")
    u = np.log(x + offset)
    lo = u.min(axis=0)
    span = u.max(axis=0) - lo
    constant = span == 0
    if np.any(constant):
        cols = np.flatnonzero(constant).tolist()
        if strict:
            raise InvalidInput(f"constant covariate columns {cols}")
        warnings.warn(f"constant covariate columns {cols} mapped to zero", ConstantColumnWarning)
    z = np.zeros_like(u)
    ok = ~constant
    z[:, ok] = (u[:, ok] - lo[ok]) / span[ok]
    return z, constant


def filter_prevalence(table, min_count=1, min_fraction=0.1):
    """Keep features whose count exceeds ``min_count`` in at least ``min_fraction`` of samples."""
    if not 0.0 <= min_fraction <= 1.0:
        raise InvalidInput("min_fraction must lie in [0, 1]")
    n = table.counts.shape[0]
    hits = (table.counts > min_count).sum(axis=0)
    # integer comparison avoids rounding at exact fractions such as 10%
    keep = hits >= np.ceil(min_fraction * n - 1e-9)
    return CountTable(
        table.counts[:, keep],
        [f for f, k in zip(table.features, keep) if k],
        table.samples,
    )


def add_intercept(x):
    """Prepend a column of ones."""
    x = np.asarray(x, dtype=float)
    return np.column_stack([np.ones(x.shape[0]), x])
