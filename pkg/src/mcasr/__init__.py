"""Multi-channel transformer ASR at desk scale.

A self-contained implementation of a transformer that attends within and
across microphone channels, together with a synthetic multi-channel audio
pipeline, a reverse-mode autodiff tensor core, a training harness, and
WER-based evaluation tooling.
"""

from .estimators import SpectrogramFeaturizer, TransformerRecognizer
from .model import ModelConfig, MultiChannelTransformer

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "MultiChannelTransformer",
    "SpectrogramFeaturizer",
    "TransformerRecognizer",
    "__version__",
]
