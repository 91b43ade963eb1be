"""Entropy-respecting finite-difference solver for a degenerate heat equation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    EntroflowError,
    InvariantViolation,
    NegativeDensityError,
    SolverError,
    SupportAtBoundaryError,
)
from .grid import DensityField, Grid1D  # noqa: E402
from .model_functions import ModelFunctions, make_custom_model, make_tanh_model, make_traffic_model  # noqa: E402

__all__ = [
    "ConfigError",
    "DensityField",
    "EntroflowError",
    "Grid1D",
    "InvariantViolation",
    "ModelFunctions",
    "NegativeDensityError",
    "SolverError",
    "SupportAtBoundaryError",
    "make_custom_model",
    "make_tanh_model",
    "make_traffic_model",
]
