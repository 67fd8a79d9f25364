"""Few-shot segmentation with hard-prototype mining and dual-path similarity fusion."""

from .core import (
    BinaryMask,
    ConfigError,
    CowError,
    EmptyRegionError,
    Episode,
    EpisodeResult,
    Image,
    NumericError,
    PartitionMasks,
    PrototypeBank,
    ShapeError,
    ValidationError,
    validate_partition,
)
from .losses import LossWeights
from .nets import CoWNet, NetConfig, PrototypeCounts

__version__ = "0.1.0"
