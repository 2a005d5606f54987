"""Scikit-learn style wrappers so the model composes with sklearn pipelines.

``SpectrogramFeaturizer`` is a stateless transformer from raw multi-channel
waveforms to (magnitude, phase) feature pairs; ``TransformerRecognizer`` is a
fit/predict estimator over featurized utterances. Both expose
``get_params``/``set_params`` and survive ``sklearn.base.clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .decoding import greedy_decode, wer
from .errors import InputError
from .frontend import feature_dims, stft_features
from .model import ModelConfig, MultiChannelTransformer, NUM_SPECIAL_TOKENS, ParameterStore
from .frontend.features import ChannelFeatures
from .training import (
    AdamOptimizer,
    Batch,
    TrainRunConfig,
    batch_loss,
    model_to_data_ids,
    pad_utterance,
)
from .util import substream


def check_waveforms(X):
    """Validate a list of utterances, each a list of equal-length 1-D channels."""
    if not isinstance(X, (list, tuple)) or not X:
        raise InputError("X must be a non-empty list of utterances")
    out = []
    for utt in X:
        channels = [np.asarray(ch, dtype=np.float64) for ch in utt]
        if not channels or any(ch.ndim != 1 for ch in channels):
            raise InputError("each utterance must be a list of 1-D channel waveforms")
        if len({ch.shape[0] for ch in channels}) != 1:
            raise InputError("all channels of one utterance must have equal length")
        out.append(channels)
    return out


def check_features(X, num_channels=None):
    """Validate a list of utterances, each a list of (mag, pha) pairs."""
    if not isinstance(X, (list, tuple)) or not X:
        raise InputError("X must be a non-empty list of featurized utterances")
    out = []
    for utt in X:
        pairs = []
        for mag, pha in utt:
            mag = np.asarray(mag, dtype=np.float64)
            pha = np.asarray(pha, dtype=np.float64)
            if mag.ndim != 2 or pha.ndim != 2 or mag.shape[0] != pha.shape[0]:
                raise InputError("each channel needs 2-D (mag, pha) with matching frames")
            pairs.append((mag, pha))
        if num_channels is not None and len(pairs) != num_channels:
            raise InputError(f"expected {num_channels} channels, got {len(pairs)}")
        out.append(pairs)
    return out


class SpectrogramFeaturizer(BaseEstimator, TransformerMixin):
    """Waveforms -> per-channel (log-magnitude, sin/cos phase) matrices."""

    def __init__(self, sample_rate=8000, frame_ms=25.0, hop_ms=10.0, fft_size=128,
                 stack_left=2, downsample=3):
        self.sample_rate = sample_rate
        self.frame_ms = frame_ms
        self.hop_ms = hop_ms
        self.fft_size = fft_size
        self.stack_left = stack_left
        self.downsample = downsample

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        utterances = check_waveforms(X)
        out = []
        for channels in utterances:
            feats = []
            for wave in channels:
                f = stft_features(
                    wave, self.sample_rate, frame_ms=self.frame_ms, hop_ms=self.hop_ms,
                    fft_size=self.fft_size, stack_left=self.stack_left,
                    downsample=self.downsample,
                )
                feats.append((f.mag, f.pha))
            out.append(feats)
        return out

    def feature_dims(self):
        return feature_dims(self.fft_size, self.stack_left)


class TransformerRecognizer(BaseEstimator):
    """Multi-channel transformer recognizer with a fit/predict interface.

    ``X``: list of utterances, each a list of C (mag, pha) pairs; ``y``: list
    of data-token id sequences. ``predict`` returns data-token sequences.
    """

    def __init__(self, num_channels=2, d_model=32, d_ff=64, n_heads=2,
                 n_enc_layers=1, n_dec_layers=1, vocab_size=12,
                 label_smoothing=0.1, use_csa=True, use_cca=True,
                 max_steps=300, batch_size=8, warmup_steps=100,
                 grad_clip_norm=None, seed=0):
        self.num_channels = num_channels
        self.d_model = d_model
        self.d_ff = d_ff
        self.n_heads = n_heads
        self.n_enc_layers = n_enc_layers
        self.n_dec_layers = n_dec_layers
        self.vocab_size = vocab_size
        self.label_smoothing = label_smoothing
        self.use_csa = use_csa
        self.use_cca = use_cca
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.warmup_steps = warmup_steps
        self.grad_clip_norm = grad_clip_norm
        self.seed = seed

    def _model_config(self, f_mag, f_pha) -> ModelConfig:
        return ModelConfig(
            num_channels=self.num_channels, d_model=self.d_model, d_ff=self.d_ff,
            n_heads=self.n_heads, n_enc_layers=self.n_enc_layers,
            n_dec_layers=self.n_dec_layers,
            vocab_size=self.vocab_size + NUM_SPECIAL_TOKENS,
            label_smoothing=self.label_smoothing,
            use_csa=self.use_csa, use_cca=self.use_cca,
            f_mag=f_mag, f_pha=f_pha,
        )

    def fit(self, X, y):
        X = check_features(X, self.num_channels)
        if len(X) != len(y):
            raise InputError(f"X has {len(X)} utterances but y has {len(y)} transcripts")
        for tokens in y:
            if any(not 0 <= int(t) < self.vocab_size for t in tokens):
                raise InputError(f"transcript token out of range [0, {self.vocab_size})")
        f_mag = X[0][0][0].shape[1]
        f_pha = X[0][0][1].shape[1]
        cfg = self._model_config(f_mag, f_pha)
        store = ParameterStore.initialize(cfg, substream(self.seed, "init"))
        model = MultiChannelTransformer(cfg, store)
        run_cfg = TrainRunConfig(
            batch_size=self.batch_size, max_steps=self.max_steps,
            warmup_steps=self.warmup_steps, seed=self.seed,
            grad_clip_norm=self.grad_clip_norm,
        )
        opt = AdamOptimizer(store, run_cfg)

        items = []
        for feats, tokens in zip(X, y):
            channels = [ChannelFeatures(mag=m, pha=p) for m, p in feats]
            t = channels[0].mag.shape[0]
            items.append(pad_utterance(channels, list(tokens), t, len(tokens) + 1))

        rng = substream(self.seed, "batch")
        step = 0
        while step < self.max_steps:
            order = rng.permutation(len(items))
            for start in range(0, len(order), self.batch_size):
                batch = Batch(items=[items[i] for i in order[start : start + self.batch_size]])
                store.zero_grad()
                loss = batch_loss(model, batch)
                loss.backward()
                opt.step()
                step += 1
                if step >= self.max_steps:
                    break
        self.model_ = model
        self.config_ = cfg
        self.final_loss_ = float(loss.data)
        return self

    def predict(self, X, max_len=None):
        check_is_fitted(self, "model_")
        X = check_features(X, self.num_channels)
        out = []
        for feats in X:
            cap = max_len if max_len is not None else feats[0][0].shape[0] + 2
            hyp = greedy_decode(self.model_, feats, max_len=cap)
            out.append(model_to_data_ids(hyp))
        return out

    def score(self, X, y):
        """1 - corpus WER (higher is better, can be negative)."""
        hyps = self.predict(X)
        errors, ref = 0, 0
        for tokens, hyp in zip(y, hyps):
            s, d, i, _ = wer(list(tokens), hyp)
            errors += s + d + i
            ref += len(tokens)
        return 1.0 - errors / max(ref, 1)
