"""Train a small skin-lesion CNN with numpy and inspect what it looks at."""

from .errors import (
    CheckpointError,
    DecodeError,
    InvalidArgumentError,
    ManifestError,
    TrainingError,
    UndefinedMetricError,
)
from .network import Model, NetworkConfig, build_model, forward
from .viz import FeatureMapId, Heatmap

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DecodeError",
    "FeatureMapId",
    "Heatmap",
    "InvalidArgumentError",
    "ManifestError",
    "Model",
    "NetworkConfig",
    "TrainingError",
    "UndefinedMetricError",
    "build_model",
    "forward",
]
