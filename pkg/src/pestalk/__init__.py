"""Emotion-aware speech-driven facial blendshape animation."""

from .blendshapes import BLENDSHAPE_NAMES, DEFAULT_PARTITION, BlendshapeSequence, Partition
from .errors import PESTalkError
from .signal import AudioClip

__version__ = "0.1.0"

__all__ = ["AudioClip", "BLENDSHAPE_NAMES", "BlendshapeSequence", "DEFAULT_PARTITION", "PESTalkError", "Partition"]
