"""Varied-size window attention (VSA) on a small numpy autodiff engine."""

from .backbone import PRESETS, Backbone, ModelConfig, build_model, preset
from .blocks import Toggles
from .errors import (ConfigError, ContractError, DimensionError, FormatError, LoadError,
                     NumericInputError, TrainingError, VSAError)
from .estimator import VSAClassifier

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "Backbone", "ModelConfig", "build_model", "preset", "Toggles", "VSAClassifier",
    "VSAError", "ConfigError", "ContractError", "DimensionError", "FormatError", "LoadError",
    "NumericInputError", "TrainingError",
]
