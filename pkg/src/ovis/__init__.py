"""Score-function gradient estimators for importance-weighted variational
bounds, analytically tractable testbeds, and Monte Carlo diagnostics."""

from . import diagnostics, estimators, harness, models, weights
from .estimators import EstimatorSpec, GradientEstimate, estimate
from .rng import Stream
from .weights import WeightSet, build_weight_set

__version__ = "0.1.0"

__all__ = [
    "EstimatorSpec",
    "GradientEstimate",
    "Stream",
    "WeightSet",
    "build_weight_set",
    "diagnostics",
    "estimate",
    "estimators",
    "harness",
    "models",
    "weights",
]
