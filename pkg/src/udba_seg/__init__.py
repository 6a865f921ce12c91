"""Dual-decoder U-net segmentation with uncertainty-driven bottleneck
attention and CT-intensity regularization."""

from .estimator import CHECKPOINT_MAGIC, DualDecoderSegmenter
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    EmptyMaskError,
    TrainingDiverged,
)
from .harness import ExperimentSpec, ablate, ablation_grid, evaluate, render_overlays, train
from .losses import LossConfig
from .network import DualDecoderNet, ModelOutput, NetworkConfig, build_network

__version__ = "0.1.0"

__all__ = [
    "CHECKPOINT_MAGIC",
    "CheckpointError",
    "ConfigurationError",
    "DualDecoderNet",
    "DualDecoderSegmenter",
    "EmptyMaskError",
    "ExperimentSpec",
    "LossConfig",
    "ModelOutput",
    "NetworkConfig",
    "TrainingDiverged",
    "ablate",
    "ablation_grid",
    "build_network",
    "evaluate",
    "render_overlays",
    "train",
    "__version__",
]
