"""Named parameter store: shapes, initialization, counting, checkpoints.

The name set and every shape are pure functions of :class:`ModelConfig`.
Checkpoint layout (little-endian): magic ``MCTC``, version u32, config JSON
(u32 length + UTF-8), tensor count u32, then per tensor: name (u32 length +
UTF-8), ndim u32, dims u32..., row-major float64 data.
"""

from __future__ import annotations

import struct

import numpy as np

from ..autodiff import Tensor
from ..errors import DataError
from .config import ModelConfig

CKPT_MAGIC = b"MCTC"
CKPT_VERSION = 1

# init kinds
_W = "glorot"
_B = "zeros"
_ONES = "ones"


def parameter_spec(cfg: ModelConfig):
    """Ordered list of (name, shape, init_kind) for every learnable tensor."""
    d, dff, c = cfg.d_model, cfg.d_ff, cfg.num_channels
    spec = []

    def attn(prefix, per_channel_bias: bool):
        for kind in ("q", "k", "v"):
            spec.append((f"{prefix}.w{kind}", (d, d), _W))
            if per_channel_bias:
                for i in range(c):
                    spec.append((f"{prefix}.b{kind}{i}", (d,), _B))
            else:
                spec.append((f"{prefix}.b{kind}", (d,), _B))
        spec.append((f"{prefix}.wo", (d, d), _W))
        spec.append((f"{prefix}.bo", (d,), _B))

    def ln(prefix):
        spec.append((f"{prefix}.gain", (d,), _ONES))
        spec.append((f"{prefix}.bias", (d,), _B))

    def ffn(prefix):
        spec.append((f"{prefix}.w1", (d, dff), _W))
        spec.append((f"{prefix}.b1", (dff,), _B))
        spec.append((f"{prefix}.w2", (dff, d), _W))
        spec.append((f"{prefix}.b2", (d,), _B))

    for i in range(c):
        spec.append((f"chan{i}.w_mag", (cfg.f_mag, cfg.d_mag_embed), _W))
        spec.append((f"chan{i}.b_mag", (cfg.d_mag_embed,), _B))
        spec.append((f"chan{i}.w_pha", (cfg.f_pha, cfg.d_pha_embed), _W))
        spec.append((f"chan{i}.b_pha", (cfg.d_pha_embed,), _B))
        spec.append((f"chan{i}.w_joint", (cfg.d_mag_embed + cfg.d_pha_embed, d), _W))
        spec.append((f"chan{i}.b_joint", (d,), _B))

    spec.append(("tok.embed", (cfg.vocab_size, d), _W))
    spec.append(("tok.bias", (d,), _B))

    for layer in range(cfg.n_enc_layers):
        if cfg.use_csa:
            attn(f"enc{layer}.csa", per_channel_bias=True)
            ln(f"enc{layer}.csa.ln1")
            ffn(f"enc{layer}.csa.ffn")
            ln(f"enc{layer}.csa.ln2")
        if cfg.use_cca:
            attn(f"enc{layer}.cca", per_channel_bias=True)
            for j in range(c):
                spec.append((f"enc{layer}.cca.mix{j}", (d,), _ONES))
            ln(f"enc{layer}.cca.ln1")
            ffn(f"enc{layer}.cca.ffn")
            ln(f"enc{layer}.cca.ln2")

    for layer in range(cfg.n_dec_layers):
        attn(f"dec{layer}.msa", per_channel_bias=False)
        ln(f"dec{layer}.ln1")
        attn(f"dec{layer}.eda", per_channel_bias=False)
        ln(f"dec{layer}.ln2")
        ffn(f"dec{layer}.ffn")
        ln(f"dec{layer}.ln3")

    spec.append(("out.w", (d, cfg.vocab_size), _W))
    spec.append(("out.b", (cfg.vocab_size,), _B))
    return spec


class ParameterStore:
    """Named, shape-checked collection of learnable tensors."""

    def __init__(self, cfg: ModelConfig, tensors: dict):
        self.cfg = cfg
        self._tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def total_size(self) -> int:
        return sum(t.size for t in self._tensors.values())

    @classmethod
    def initialize(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ParameterStore":
        """Glorot-uniform weights, zero biases, ones for gains and mixing vectors."""
        tensors = {}
        for name, shape, kind in parameter_spec(cfg):
            if kind == _W:
                fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                data = rng.uniform(-limit, limit, size=shape)
                if name == "out.w":
                    # keep initial logits near zero so training starts from an
                    # almost-uniform output distribution
                    data *= 0.1
            elif kind == _ONES:
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(cfg, tensors)

    # -- checkpoint I/O ----------------------------------------------------

    def save(self, path) -> None:
        cfg_bytes = self.cfg.to_json().encode("utf-8")
        try:
            with open(path, "wb") as f:
                f.write(CKPT_MAGIC)
                f.write(struct.pack("<I", CKPT_VERSION))
                f.write(struct.pack("<I", len(cfg_bytes)))
                f.write(cfg_bytes)
                f.write(struct.pack("<I", len(self._tensors)))
                for name, t in self._tensors.items():
                    nb = name.encode("utf-8")
                    f.write(struct.pack("<I", len(nb)))
                    f.write(nb)
                    f.write(struct.pack("<I", t.ndim))
                    f.write(struct.pack(f"<{t.ndim}I", *t.shape))
                    f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        except OSError as e:
            raise DataError(f"cannot write checkpoint {path}: {e}") from e

    @classmethod
    def load(cls, path) -> "ParameterStore":
        try:
            with open(path, "rb") as f:
                blob = f.read()
        except OSError as e:
            raise DataError(f"cannot read checkpoint {path}: {e}") from e
        if blob[:4] != CKPT_MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic {blob[:4]!r})")
        off = 4
        (version,) = struct.unpack_from("<I", blob, off)
        off += 4
        if version != CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        cfg = ModelConfig.from_json(blob[off : off + cfg_len].decode("utf-8"))
        off += cfg_len
        (n_tensors,) = struct.unpack_from("<I", blob, off)
        off += 4
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            tensors[name] = Tensor(data.copy(), requires_grad=True, name=name)
        expected = {name for name, _, _ in parameter_spec(cfg)}
        if set(tensors) != expected:
            missing = sorted(expected - set(tensors))[:3]
            extra = sorted(set(tensors) - expected)[:3]
            raise DataError(
                f"{path}: tensor names do not match config (missing {missing}, extra {extra})"
            )
        return cls(cfg, tensors)


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form total parameter count implied by the configuration."""
    d, dff, c, vocab = cfg.d_model, cfg.d_ff, cfg.num_channels, cfg.vocab_size
    attn_shared = 3 * d * d + d * d + d  # q/k/v weights + output projection
    ffn = d * dff + dff + dff * d + d
    ln = 2 * d

    chan_embed = c * (
        cfg.f_mag * cfg.d_mag_embed
        + cfg.d_mag_embed
        + cfg.f_pha * cfg.d_pha_embed
        + cfg.d_pha_embed
        + (cfg.d_mag_embed + cfg.d_pha_embed) * d
        + d
    )
    tok_embed = vocab * d + d

    enc_layer = 0
    if cfg.use_csa:
        enc_layer += attn_shared + c * 3 * d + ffn + 2 * ln
    if cfg.use_cca:
        enc_layer += attn_shared + c * 3 * d + c * d + ffn + 2 * ln

    dec_layer = 2 * (attn_shared + 3 * d) + ffn + 3 * ln
    out_proj = d * vocab + vocab

    return (
        chan_embed
        + tok_embed
        + cfg.n_enc_layers * enc_layer
        + cfg.n_dec_layers * dec_layer
        + out_proj
    )


def parameter_breakdown(cfg: ModelConfig) -> dict:
    """Per-block parameter counts for reporting."""
    groups: dict[str, int] = {}
    for name, shape, _ in parameter_spec(cfg):
        top = name.split(".")[0]
        if top.startswith("chan"):
            top = "channel_embedding"
        elif top.startswith("enc"):
            top = "encoder"
        elif top.startswith("dec"):
            top = "decoder"
        elif top == "tok":
            top = "token_embedding"
        elif top == "out":
            top = "output_projection"
        groups[top] = groups.get(top, 0) + int(np.prod(shape))
    groups["total"] = sum(groups.values())
    return groups
