"""STFT magnitude/phase features with left-context stacking and low frame rate.

Magnitude features are log-power STFT bins of the current frame stacked with
its two left neighbors; phase features are sine/cosine of the STFT principal
angles of the current frame only. After stacking, every ``downsample``-th
frame is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError

MAG_FLOOR = 1e-10


@dataclass
class ChannelFeatures:
    """Per-channel feature matrices for one utterance."""

    mag: np.ndarray  # (T, F_mag) log-power, stacked
    pha: np.ndarray  # (T, F_pha) = [sin theta, cos theta] of the center frame
    utterance_id: str | None = None

    @property
    def num_frames(self) -> int:
        return self.mag.shape[0]


def analysis_window_samples(frame_samples: int, fft_size: int) -> int:
    # The FFT cannot use more than fft_size samples; with the desk defaults
    # (25 ms frame at 8 kHz, fft_size=128) the effective window is 128 samples.
    return min(frame_samples, fft_size)


def raw_frame_count(n_samples: int, window: int, hop: int) -> int:
    """Frames of a hop-``hop`` analysis: 1 + floor((n - w) / h)."""
    if n_samples < window:
        raise InputError(f"waveform of {n_samples} samples is shorter than one frame ({window})")
    return 1 + (n_samples - window) // hop


def downsampled_frame_count(raw_frames: int, downsample: int) -> int:
    """Frames kept after keep-every-``downsample`` decimation: ceil(raw / k)."""
    return -(-raw_frames // downsample)


def stft_features(
    wave: np.ndarray,
    sample_rate: int,
    frame_ms: float = 25.0,
    hop_ms: float = 10.0,
    fft_size: int = 128,
    stack_left: int = 2,
    downsample: int = 3,
    utterance_id: str | None = None,
) -> ChannelFeatures:
    """Featurize one waveform.

    Hann-windowed STFT; ``mag = log(|STFT|^2 + floor)`` stacked with
    ``stack_left`` left neighbors (zero-padded at the start); ``pha`` holds
    sine then cosine of the principal angles of the kept (center) frames.
    """
    if fft_size <= 0:
        raise ConfigError("fft_size must be positive")
    if downsample < 1:
        raise ConfigError("downsample must be >= 1")
    wave = np.asarray(wave, dtype=np.float64)
    frame_samples = int(round(frame_ms * sample_rate / 1000.0))
    hop = int(round(hop_ms * sample_rate / 1000.0))
    if hop < 1 or frame_samples < 1:
        raise ConfigError("frame_ms and hop_ms must be positive at this sample rate")
    window = analysis_window_samples(frame_samples, fft_size)
    n_frames = raw_frame_count(wave.shape[0], window, hop)

    starts = hop * np.arange(n_frames)
    frames = wave[starts[:, None] + np.arange(window)[None, :]]
    taper = np.hanning(window)
    spec = np.fft.rfft(frames * taper, n=fft_size, axis=1)

    logmag = np.log(np.abs(spec) ** 2 + MAG_FLOOR)
    theta = np.angle(spec)

    n_bins = fft_size // 2 + 1
    stacked = np.zeros((n_frames, (stack_left + 1) * n_bins), dtype=np.float64)
    for k in range(stack_left + 1):
        # slot k holds frame t - (stack_left - k); missing left context stays zero
        shift = stack_left - k
        stacked[shift:, k * n_bins : (k + 1) * n_bins] = logmag[: n_frames - shift]

    keep = np.arange(0, n_frames, downsample)
    mag = stacked[keep]
    pha = np.concatenate([np.sin(theta[keep]), np.cos(theta[keep])], axis=1)
    return ChannelFeatures(mag=mag, pha=pha, utterance_id=utterance_id)


def feature_dims(fft_size: int, stack_left: int = 2) -> tuple[int, int]:
    """(F_mag, F_pha) implied by the STFT settings."""
    n_bins = fft_size // 2 + 1
    return (stack_left + 1) * n_bins, 2 * n_bins
