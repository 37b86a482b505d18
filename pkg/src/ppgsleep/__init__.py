"""Sleep staging from PPG at desk scale: preprocessing, super-window
arrangements, a CNN+TCN staging model on a minimal autodiff engine, masked
training, and the evaluation suite."""

__version__ = "0.1.0"

from . import backend
from .model import ModelSpec
from .sigprep import FilterSpec, Recording, WindowGrid
from .superwin import SuperWindowSpec
from .traineval import EvalReport, StageLabel, TrainConfig

__all__ = [
    "backend",
    "ModelSpec",
    "FilterSpec",
    "Recording",
    "WindowGrid",
    "SuperWindowSpec",
    "EvalReport",
    "StageLabel",
    "TrainConfig",
    "__version__",
]
