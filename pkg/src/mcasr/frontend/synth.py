"""Synthetic microphone-array scenes for a token-rendering task.

Each "word" token is rendered as a pure tone at a distinct STFT-bin-aligned
frequency; every channel observes the same clean signal with an integer
sample delay, a gain, and independent Gaussian noise. Stands in for a real
far-field corpus at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..util import substream

# Lowest bin used for token tones; bins 0..2 are too close to DC.
_FIRST_TONE_BIN = 3


@dataclass
class SceneConfig:
    """Everything needed to generate and featurize one synthetic dataset."""

    num_channels: int = 2
    sample_rate: int = 8000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 128
    stack_left: int = 2
    downsample: int = 3
    vocab_size: int = 12          # data tokens, excluding PAD/BOS/EOS
    tokens_min: int = 2
    tokens_max: int = 5
    tone_ms: float = 120.0
    delays: tuple = (0, 3)        # integer samples, per channel
    gains: tuple = (1.0, 0.9)
    # channel 0 is a distant/noisy microphone, channel 1 a close/clean one;
    # the asymmetry is what makes the cross-channel architecture earn its keep
    noise_std: tuple = (3.0, 0.3)
    seed: int = 0

    def __post_init__(self):
        if self.num_channels < 1:
            raise ConfigError("num_channels must be >= 1")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.fft_size <= 0:
            raise ConfigError("fft_size must be positive")
        if self.tokens_min < 1 or self.tokens_max < self.tokens_min:
            raise ConfigError("need 1 <= tokens_min <= tokens_max")
        self.delays = tuple(int(d) for d in np.broadcast_to(self.delays, (self.num_channels,)))
        self.gains = tuple(float(g) for g in np.broadcast_to(self.gains, (self.num_channels,)))
        self.noise_std = tuple(
            float(s) for s in np.broadcast_to(self.noise_std, (self.num_channels,))
        )
        hop = self.hop_samples
        for d in self.delays:
            if d < 0 or d >= hop:
                raise ConfigError(f"channel delay {d} must be in [0, hop={hop}) samples")
        for g in self.gains:
            if not 0.0 < g <= 1.5:
                raise ConfigError(f"channel gain {g} must be in (0, 1.5]")
        for s in self.noise_std:
            if s < 0:
                raise ConfigError(f"noise_std {s} must be >= 0")
        # raises ConfigError if the vocabulary cannot fit below Nyquist
        tone_bins(self.vocab_size, self.fft_size)

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def tone_samples(self) -> int:
        return int(round(self.tone_ms * self.sample_rate / 1000.0))


def tone_bins(vocab_size: int, fft_size: int) -> np.ndarray:
    """Distinct, uniformly spaced FFT bins for each data token.

    Bin-center frequencies avoid spectral leakage when the analysis window
    length equals ``fft_size``.
    """
    top = fft_size // 2 - 1
    usable = top - _FIRST_TONE_BIN + 1
    if vocab_size > usable:
        raise ConfigError(
            f"vocab_size {vocab_size} needs {vocab_size} distinct tone bins but only "
            f"{usable} fit below Nyquist for fft_size {fft_size}"
        )
    spacing = max(1, usable // vocab_size)
    bins = _FIRST_TONE_BIN + spacing * np.arange(vocab_size)
    assert bins[-1] <= top
    return bins


def token_frequency(token: int, cfg: SceneConfig) -> float:
    """Tone frequency in Hz for one data token."""
    bins = tone_bins(cfg.vocab_size, cfg.fft_size)
    return float(bins[token]) * cfg.sample_rate / cfg.fft_size


def render_clean(tokens, cfg: SceneConfig) -> np.ndarray:
    """Concatenated pure-tone segments, one per token, unit amplitude."""
    bins = tone_bins(cfg.vocab_size, cfg.fft_size)
    n = cfg.tone_samples
    segments = []
    for tok in tokens:
        freq = bins[tok] * cfg.sample_rate / cfg.fft_size
        t = np.arange(n, dtype=np.float64)
        segments.append(np.sin(2.0 * np.pi * freq * t / cfg.sample_rate))
    return np.concatenate(segments)


def generate_utterance(cfg: SceneConfig, rng: np.random.Generator):
    """Draw a transcript and render its multi-channel waveforms.

    Returns ``(waves, tokens)`` with ``waves`` a list of C equal-length
    float64 arrays. Deterministic for a fixed RNG state.
    """
    n_tokens = int(rng.integers(cfg.tokens_min, cfg.tokens_max + 1))
    tokens = [int(t) for t in rng.integers(0, cfg.vocab_size, size=n_tokens)]
    clean = render_clean(tokens, cfg)
    total = clean.shape[0] + max(cfg.delays)
    waves = []
    for c in range(cfg.num_channels):
        wave = np.zeros(total, dtype=np.float64)
        d = cfg.delays[c]
        wave[d : d + clean.shape[0]] = cfg.gains[c] * clean
        wave += rng.normal(0.0, cfg.noise_std[c], size=total)
        waves.append(wave)
    return waves, tokens


def utterance_rng(cfg: SceneConfig, index: int) -> np.random.Generator:
    """Per-utterance RNG; generation is pure in (config, seed, index)."""
    return substream(cfg.seed, "data", index)
