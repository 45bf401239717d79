"""Boundary-aware segmentation with a residual CNN and a lightweight transformer stream."""

__version__ = "0.1.0"

from .config import ExperimentConfig, ModelConfig, TrainConfig  # noqa: E402
from .exceptions import CTOSegError  # noqa: E402
from .model import build_model  # noqa: E402

__all__ = [
    "CTOSegError",
    "ExperimentConfig",
    "ModelConfig",
    "TrainConfig",
    "build_model",
    "__version__",
]
