"""
projdet - projective multi-view 3-D object detection in numpy

A small, framework-free library for detecting 3-D boxes from several
calibrated camera feature maps: a heatmap over a bird's-eye-view grid seeds
the object queries, a decoder refines them with projective cross-attention,
and an optional memory bank fuses past frames.
"""

__version__ = "0.1.0"

from .config import Config, load_config
from .detector import Box3D, DecoderConfig, Detector
from .exceptions import (
    CheckpointError,
    ConfigError,
    GeometryError,
    GradCheckError,
    NonFiniteError,
    ProjdetError,
    ShapeError,
    TimestampOrderError,
    TrainingDivergedError,
)
from .gradcheck import grad_check
from .metrics import evaluate
from .tensor import Tensor

__all__ = [
    "Box3D",
    "CheckpointError",
    "Config",
    "ConfigError",
    "DecoderConfig",
    "Detector",
    "GeometryError",
    "GradCheckError",
    "NonFiniteError",
    "ProjdetError",
    "ShapeError",
    "Tensor",
    "TimestampOrderError",
    "TrainingDivergedError",
    "evaluate",
    "grad_check",
    "load_config",
]
