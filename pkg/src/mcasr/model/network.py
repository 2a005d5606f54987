"""The multi-channel transformer: embeddings, CSA/CCA encoder, EDA decoder.

Every encoder layer runs channel-wise self attention (CSA) per channel and
then cross-channel attention (CCA) per channel; the decoder interleaves
masked self-attention with encoder-decoder attention (EDA) whose keys and
values come from the mean of the per-channel encoder outputs. Q/K/V
projections use a ReLU nonlinearity as published (configurable).
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import InputError
from .config import BOS_ID, ModelConfig, PAD_ID
from .layers import (
    apply_dropout,
    feed_forward,
    key_padding_mask,
    mh_sdpa,
    qkv_projection,
    sinusoidal_positional_encoding,
)
from .params import ParameterStore


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class MultiChannelTransformer:
    """Seq2seq model over C feature channels with a shared token sequence."""

    def __init__(
        self,
        cfg: ModelConfig,
        params: ParameterStore | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.cfg = cfg
        if params is None:
            params = ParameterStore.initialize(cfg, rng or np.random.default_rng(0))
        self.params = params
        self._dropout_rng: np.random.Generator | None = None

    def train_mode(self, dropout_rng: np.random.Generator) -> None:
        self._dropout_rng = dropout_rng

    def eval_mode(self) -> None:
        self._dropout_rng = None

    # -- embeddings --------------------------------------------------------

    def embed_channel(self, mag, pha, channel: int) -> Tensor:
        """[mag W^me, pha W^pe] W^je + b + PE, shaped (T, d_model)."""
        p = self.params
        mag_t, pha_t = _as_tensor(mag), _as_tensor(pha)
        m = ad.add_bias(ad.matmul(mag_t, p[f"chan{channel}.w_mag"]), p[f"chan{channel}.b_mag"])
        ph = ad.add_bias(ad.matmul(pha_t, p[f"chan{channel}.w_pha"]), p[f"chan{channel}.b_pha"])
        joint = ad.add_bias(
            ad.matmul(ad.concat_last_dim(m, ph), p[f"chan{channel}.w_joint"]),
            p[f"chan{channel}.b_joint"],
        )
        pe = sinusoidal_positional_encoding(joint.shape[0], self.cfg.d_model)
        return ad.add_const(joint, pe)

    def embed_tokens(self, ids) -> Tensor:
        """Row lookup + bias + PE, shaped (U, d_model)."""
        ids = np.asarray(ids, dtype=np.int64)
        emb = ad.add_bias(ad.embedding_lookup(self.params["tok.embed"], ids), self.params["tok.bias"])
        pe = sinusoidal_positional_encoding(ids.shape[0], self.cfg.d_model)
        return ad.add_const(emb, pe)

    # -- encoder -----------------------------------------------------------

    def _attention_sublayer(self, prefix, q_in, kv_in, channel=None, mask=None):
        """QKV projections + MH-SDPA + dropout; residual comes from the caller."""
        p, cfg = self.params, self.cfg
        suffix = "" if channel is None else str(channel)
        q = qkv_projection(q_in, p[f"{prefix}.wq"], p[f"{prefix}.bq{suffix}"], cfg.qkv_activation)
        k = qkv_projection(kv_in, p[f"{prefix}.wk"], p[f"{prefix}.bk{suffix}"], cfg.qkv_activation)
        v = qkv_projection(kv_in, p[f"{prefix}.wv"], p[f"{prefix}.bv{suffix}"], cfg.qkv_activation)
        out = mh_sdpa(
            q, k, v, cfg.n_heads, w_out=p[f"{prefix}.wo"], b_out=p[f"{prefix}.bo"], mask=mask
        )
        return apply_dropout(out, cfg.dropout, self._dropout_rng)

    def _ffn_sublayer(self, prefix, x):
        p = self.params
        out = feed_forward(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"], p[f"{prefix}.w2"], p[f"{prefix}.b2"])
        return apply_dropout(out, self.cfg.dropout, self._dropout_rng)

    def _ln(self, prefix, x):
        return ad.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"])

    def csa_layer(self, x: Tensor, layer: int, channel: int, key_mask=None) -> Tensor:
        """One channel-wise self-attention block; identity when CSA is ablated."""
        if not self.cfg.use_csa:
            return x
        prefix = f"enc{layer}.csa"
        att = self._attention_sublayer(prefix, x, x, channel=channel, mask=key_mask)
        h = self._ln(f"{prefix}.ln1", ad.add(x, att))
        f = self._ffn_sublayer(f"{prefix}.ffn", h)
        return self._ln(f"{prefix}.ln2", ad.add(h, f))

    def cross_channel_mix(self, hcs_list, layer: int, channel: int) -> Tensor:
        """Weighted sum over the *other* channels: sum_{j != i} A_j ⊙ H_j."""
        terms = [
            ad.mul_rowvec(h, self.params[f"enc{layer}.cca.mix{j}"])
            for j, h in enumerate(hcs_list)
            if j != channel
        ]
        mixed = terms[0]
        for t in terms[1:]:
            mixed = ad.add(mixed, t)
        return mixed

    def cca_layer(self, hcs_list, layer: int, channel: int, key_mask=None) -> Tensor:
        """One cross-channel attention block; identity when CCA is ablated.

        Queries come from the channel's own representation; keys and values
        from the learned mix of the other channels. The residual follows the
        query path.
        """
        if not self.cfg.use_cca:
            return hcs_list[channel]
        prefix = f"enc{layer}.cca"
        own = hcs_list[channel]
        mixed = self.cross_channel_mix(hcs_list, layer, channel)
        att = self._attention_sublayer(prefix, own, mixed, channel=channel, mask=key_mask)
        h = self._ln(f"{prefix}.ln1", ad.add(own, att))
        f = self._ffn_sublayer(f"{prefix}.ffn", h)
        return self._ln(f"{prefix}.ln2", ad.add(h, f))

    def encode(self, channel_inputs, key_keep=None):
        """Run the encoder stack over per-channel embeddings.

        ``channel_inputs``: list of C tensors (T, d_model), e.g. from
        :meth:`embed_channel`. ``key_keep``: optional boolean (T,) frame mask
        excluding PAD frames from attention keys. Returns C tensors.
        """
        cfg = self.cfg
        if len(channel_inputs) != cfg.num_channels:
            raise InputError(
                f"expected {cfg.num_channels} channel inputs, got {len(channel_inputs)}"
            )
        mask = None if key_keep is None else key_padding_mask(key_keep)
        states = list(channel_inputs)
        for layer in range(cfg.n_enc_layers):
            states = [self.csa_layer(x, layer, i, key_mask=mask) for i, x in enumerate(states)]
            states = [self.cca_layer(states, layer, i, key_mask=mask) for i in range(cfg.num_channels)]
        return states

    # -- decoder -----------------------------------------------------------

    def eda_layer(self, hsa: Tensor, enc_outputs, layer: int, key_mask=None) -> Tensor:
        """Encoder-decoder attention over the channel-averaged encoder output."""
        prefix = f"dec{layer}.eda"
        avg = enc_outputs[0] if len(enc_outputs) == 1 else ad.mean_over(enc_outputs)
        att = self._attention_sublayer(prefix, hsa, avg, mask=key_mask)
        h = self._ln(f"dec{layer}.ln2", ad.add(hsa, att))
        f = self._ffn_sublayer(f"dec{layer}.ffn", h)
        return self._ln(f"dec{layer}.ln3", ad.add(h, f))

    def masked_self_attention(self, y: Tensor, layer: int) -> Tensor:
        prefix = f"dec{layer}.msa"
        p, cfg = self.params, self.cfg
        q = qkv_projection(y, p[f"{prefix}.wq"], p[f"{prefix}.bq"], cfg.qkv_activation)
        k = qkv_projection(y, p[f"{prefix}.wk"], p[f"{prefix}.bk"], cfg.qkv_activation)
        v = qkv_projection(y, p[f"{prefix}.wv"], p[f"{prefix}.bv"], cfg.qkv_activation)
        att = mh_sdpa(
            q, k, v, cfg.n_heads, w_out=p[f"{prefix}.wo"], b_out=p[f"{prefix}.bo"], causal=True
        )
        att = apply_dropout(att, cfg.dropout, self._dropout_rng)
        return self._ln(f"dec{layer}.ln1", ad.add(y, att))

    def decode_forward(self, prefix_ids, enc_outputs, key_keep=None) -> Tensor:
        """Logits (U, vocab) for a BOS-led token prefix, teacher-forced."""
        prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
        if prefix_ids.size == 0:
            raise InputError("decoder prefix is empty")
        if prefix_ids[0] != BOS_ID:
            raise InputError(f"decoder prefix must start with BOS ({BOS_ID}), got {prefix_ids[0]}")
        mask = None if key_keep is None else key_padding_mask(key_keep)
        h = self.embed_tokens(prefix_ids)
        for layer in range(self.cfg.n_dec_layers):
            h = self.masked_self_attention(h, layer)
            h = self.eda_layer(h, enc_outputs, layer, key_mask=mask)
        return ad.add_bias(ad.matmul(h, self.params["out.w"]), self.params["out.b"])

    def decode_step(self, prefix_ids, enc_outputs, key_keep=None) -> np.ndarray:
        """Logits of the next token given the prefix (last row only)."""
        return self.decode_forward(prefix_ids, enc_outputs, key_keep=key_keep).data[-1]

    def encode_features(self, channel_features, key_keep=None):
        """Embed raw (mag, pha) pairs and run the encoder stack."""
        embedded = [
            self.embed_channel(mag, pha, i) for i, (mag, pha) in enumerate(channel_features)
        ]
        return self.encode(embedded, key_keep=key_keep)

    # -- end to end --------------------------------------------------------

    def forward(self, channel_features, dec_input_ids, key_keep=None) -> Tensor:
        """Features -> embeddings -> encoder -> decoder logits.

        ``channel_features``: list of C (mag, pha) array pairs.
        """
        embedded = [
            self.embed_channel(mag, pha, i) for i, (mag, pha) in enumerate(channel_features)
        ]
        enc = self.encode(embedded, key_keep=key_keep)
        return self.decode_forward(dec_input_ids, enc, key_keep=key_keep)


def label_smoothed_loss(logits: Tensor, targets, eps_ls: float, pad_id: int = PAD_ID) -> Tensor:
    """Mean over non-pad positions of the smoothed cross entropy.

    The target distribution puts ``1 - eps`` on the reference token and
    ``eps / (L - 1)`` on every other token; PAD positions are excluded.
    """
    targets = np.asarray(targets, dtype=np.int64)
    u, vocab = logits.shape
    if targets.shape != (u,):
        raise InputError(f"targets shape {targets.shape} does not match logits rows {u}")
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise InputError("loss: all target positions are PAD")
    q = np.full((u, vocab), eps_ls / (vocab - 1), dtype=np.float64)
    q[np.arange(u), targets] = 1.0 - eps_ls
    q[~keep] = 0.0
    logp = ad.log_softmax_rows(logits)
    return ad.scale(ad.sum_all(ad.mul_const(logp, q)), -1.0 / n)
