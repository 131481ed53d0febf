"""Dual-group spike-and-slab Gibbs sampling for covariate-dependent graphical models."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DataError,
    DegenerateGraph,
    DGSSError,
    DimensionMismatch,
    EmptyChain,
    InvalidInput,
    InvalidParam,
    NotPositiveDefinite,
    NumericalFailure,
    PrecisionNotPD,
    QuadratureFailure,
    ValidationFailure,
)
from .gibbs import ChainOutput, SweepConfig, merge_chains, run_chain, run_chains  # noqa: E402
from .inference import MppiArray, SelectionReport, summarize, symmetrize_or, threshold_mppi  # noqa: E402
from .model import Dataset, HyperParams, SamplerState  # noqa: E402
from .simulation import GroundTruth, SimConfig, evaluate_tasks, generate_dataset, generate_truth  # noqa: E402
