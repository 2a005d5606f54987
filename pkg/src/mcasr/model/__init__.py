"""Multi-channel transformer model: config, parameters, layers, network."""

from .config import BOS_ID, EOS_ID, ModelConfig, NUM_SPECIAL_TOKENS, PAD_ID
from .layers import (
    causal_mask,
    feed_forward,
    key_padding_mask,
    mh_sdpa,
    qkv_projection,
    sinusoidal_positional_encoding,
)
from .network import MultiChannelTransformer, label_smoothed_loss
from .params import (
    ParameterStore,
    count_parameters,
    parameter_breakdown,
    parameter_spec,
)

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "ModelConfig",
    "MultiChannelTransformer",
    "NUM_SPECIAL_TOKENS",
    "PAD_ID",
    "ParameterStore",
    "causal_mask",
    "count_parameters",
    "feed_forward",
    "key_padding_mask",
    "label_smoothed_loss",
    "mh_sdpa",
    "parameter_breakdown",
    "parameter_spec",
    "qkv_projection",
    "sinusoidal_positional_encoding",
]
