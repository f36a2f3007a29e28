"""Log skew-normal distribution families.

Densities, cdfs, moments, and sampling for multivariate log-skewed laws built
from a normal kernel and a normal-cdf skewing factor, plus Bayesian fitting by
data-augmented MCMC and the accompanying model-comparison statistics.
"""

__version__ = "0.1.0"

from . import distributions, inference, io_cli, model_selection, numerics  # noqa: F401
from .errors import (  # noqa: F401
    BadPartition,
    DimensionError,
    DimensionTooLarge,
    DomainError,
    EmptyFile,
    InvalidSkewness,
    LogskewError,
    NonFinite,
    NonPositiveValue,
    NotBlockDiagonal,
    NotPositiveDefinite,
    NotPSD,
    ParseError,
    TooFewDraws,
)
