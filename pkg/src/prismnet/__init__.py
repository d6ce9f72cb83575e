"""Tri-modal (series, text, image) load forecasting with a contrastive
objective guided by partial information decomposition."""

from .config import ExperimentConfig, load_config
from .data import ConfigError, IngestionError
from .model import ModelConfig, PrismNet
from .tensor import ContractError, DimensionError, Tensor

__all__ = ["ContractError", "ConfigError", "DimensionError", "ExperimentConfig", "IngestionError",
           "ModelConfig", "PrismNet", "Tensor", "load_config"]
__version__ = "0.1.0"
