"""Dual-encoder lesion segmentation with edge/body cross-attention fusion."""

from .decoder import LCAUnet, ModelConfig, SegOutput
from .windows import ConfigurationError

__all__ = ["LCAUnet", "ModelConfig", "SegOutput", "ConfigurationError"]
__version__ = "0.1.0"
