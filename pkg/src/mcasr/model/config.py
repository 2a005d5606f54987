"""Architecture configuration and special-token conventions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from ..errors import ConfigError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
NUM_SPECIAL_TOKENS = 3


@dataclass
class ModelConfig:
    num_channels: int = 2
    d_model: int = 64
    d_ff: int = 128
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    vocab_size: int = 15          # includes PAD/BOS/EOS
    label_smoothing: float = 0.1
    use_csa: bool = True
    use_cca: bool = True
    dropout: float = 0.0
    qkv_activation: str = "relu"  # "relu" (as published) or "identity"
    f_mag: int = 195
    f_pha: int = 130

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.num_channels < 1:
            raise ConfigError("num_channels must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})"
            )
        if self.d_model % 2 != 0:
            raise ConfigError("d_model must be even (magnitude/phase split)")
        if self.n_enc_layers < 1 or self.n_dec_layers < 1:
            raise ConfigError("n_enc_layers and n_dec_layers must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if not (self.use_csa or self.use_cca):
            raise ConfigError("at least one of use_csa / use_cca must be enabled")
        if self.use_cca and self.num_channels < 2:
            raise ConfigError("use_cca requires num_channels >= 2 (no other channels exist)")
        if self.qkv_activation not in ("relu", "identity"):
            raise ConfigError(f"unknown qkv_activation {self.qkv_activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.vocab_size <= NUM_SPECIAL_TOKENS:
            raise ConfigError(
                f"vocab_size must exceed the {NUM_SPECIAL_TOKENS} special tokens"
            )

    @property
    def d_mag_embed(self) -> int:
        return self.d_model // 2

    @property
    def d_pha_embed(self) -> int:
        return self.d_model // 2

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))
