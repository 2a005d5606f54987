"""Attention building blocks: MH-SDPA, positional encoding, FFN, masks."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import NEG_INF, Tensor


def sinusoidal_positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Standard sinusoidal table: sin on even features, cos on odd features."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.zeros((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def causal_mask(n: int) -> np.ndarray:
    """(n, n) additive mask: -inf strictly above the diagonal."""
    mask = np.zeros((n, n), dtype=np.float64)
    mask[np.triu_indices(n, k=1)] = NEG_INF
    return mask


def key_padding_mask(key_keep: np.ndarray) -> np.ndarray | None:
    """(1, n_keys) additive mask from a boolean keep-vector, or None if all kept."""
    key_keep = np.asarray(key_keep, dtype=bool)
    if key_keep.all():
        return None
    mask = np.where(key_keep, 0.0, NEG_INF)
    return mask[None, :]


def qkv_projection(x: Tensor, w: Tensor, b: Tensor, activation: str = "relu") -> Tensor:
    """``act(x W + 1 bᵀ)``; the activation is ReLU as published."""
    z = ad.add_bias(ad.matmul(x, w), b)
    return ad.relu(z) if activation == "relu" else z


def mh_sdpa(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    w_out: Tensor | None = None,
    b_out: Tensor | None = None,
    causal: bool = False,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention.

    Scores are scaled by 1/sqrt(d_head); an optional additive ``mask`` (and/or
    the causal mask) is applied before the row softmax. With ``w_out=None``
    the concatenated heads are returned without an output projection.
    """
    d = q.shape[-1]
    if d % n_heads != 0:
        raise ad.ShapeError(f"mh_sdpa: d_model {d} not divisible by {n_heads} heads")
    qh = ad.split_heads(q, n_heads)
    kh = ad.split_heads(k, n_heads)
    vh = ad.split_heads(v, n_heads)
    scores = ad.scale(ad.bmm(qh, ad.transpose(kh)), 1.0 / np.sqrt(d // n_heads))
    if causal:
        if q.shape[0] != k.shape[0]:
            raise ad.ShapeError(
                f"mh_sdpa: causal mask needs square scores, got {q.shape[0]}x{k.shape[0]}"
            )
        scores = ad.add_const(scores, causal_mask(q.shape[0]))
    if mask is not None:
        scores = ad.add_const(scores, mask)
    weights = ad.softmax_rows(scores)
    out = ad.merge_heads(ad.bmm(weights, vh))
    if w_out is not None:
        out = ad.add_bias(ad.matmul(out, w_out), b_out)
    if return_weights:
        return out, weights
    return out


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise FFN: Linear -> ReLU -> Linear."""
    h = ad.relu(ad.add_bias(ad.matmul(x, w1), b1))
    return ad.add_bias(ad.matmul(h, w2), b2)


def apply_dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or no RNG (inference)."""
    if p <= 0.0 or rng is None:
        return x
    keep = rng.random(x.shape) >= p
    return ad.mul_const(x, keep / (1.0 - p))
