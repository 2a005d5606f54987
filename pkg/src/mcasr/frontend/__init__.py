"""Synthetic multi-channel audio generation and STFT featurization."""

from .features import (
    ChannelFeatures,
    analysis_window_samples,
    downsampled_frame_count,
    feature_dims,
    raw_frame_count,
    stft_features,
)
from .data import build_dataset, read_features, read_manifest, write_features, write_manifest
from .synth import SceneConfig, generate_utterance, token_frequency, tone_bins, utterance_rng

__all__ = [
    "ChannelFeatures",
    "SceneConfig",
    "analysis_window_samples",
    "build_dataset",
    "downsampled_frame_count",
    "feature_dims",
    "generate_utterance",
    "raw_frame_count",
    "read_features",
    "read_manifest",
    "stft_features",
    "token_frequency",
    "tone_bins",
    "utterance_rng",
    "write_features",
    "write_manifest",
]
