"""Manifold-pooling SPD network for EEG motor-imagery decoding.

The pipeline is a rhythm-adaptive convolutional frontend producing windowed
covariance nodes, manifold node pooling, and a BiMap/ReEig/LogEig network
trained with Riemannian Adam. Everything is plain numpy with hand-written
backward passes.
"""
from .errors import ConfigError, DomainError, FormatError, InvalidInput, MPNetError, NumericalFailure
from .model import MPNet, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "MPNet",
    "ModelConfig",
    "MPNetError",
    "InvalidInput",
    "ConfigError",
    "DomainError",
    "NumericalFailure",
    "FormatError",
]
