"""Probabilistic forecasting of zero-inflated grid-month count panels."""

__version__ = "0.1.0"

from .errors import (ConfigError, HurdlecastError, SelectionError,
                     TuningError, ValidationError)
from .forest import HyperParams
from .hurdle import ForecastSet, HurdleModel
from .panel import PanelDataset, SyntheticConfig, generate_synthetic

__all__ = [
    "ConfigError",
    "ForecastSet",
    "HurdleModel",
    "HurdlecastError",
    "HyperParams",
    "PanelDataset",
    "SelectionError",
    "SyntheticConfig",
    "TuningError",
    "ValidationError",
    "generate_synthetic",
    "__version__",
]
