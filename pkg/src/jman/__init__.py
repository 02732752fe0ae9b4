"""Multi-step joint-modality attention for video-grounded dialogue answers."""
from .core import ModelConfig
from .errors import DataError, DimensionError, JmanError, NumericError, ParameterError, UsageError
from .model import JMAN

__version__ = "0.1.0"

__all__ = ["JMAN", "ModelConfig", "JmanError", "DataError", "DimensionError", "NumericError", "ParameterError", "UsageError"]
