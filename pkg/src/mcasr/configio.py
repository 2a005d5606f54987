"""INI config files (`key = value` under bracketed sections) for the CLI.

Sections: ``[data]`` (scene + featurization + dataset size), ``[model]``,
``[training]``, ``[decode]``. Unknown keys are fatal and named in the error.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError
from .frontend import SceneConfig, feature_dims
from .model import ModelConfig, NUM_SPECIAL_TOKENS
from .training import TrainRunConfig

_INT = int
_FLOAT = float


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_list(s: str):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _int_list(s: str):
    return tuple(int(x) for x in s.replace(",", " ").split())


_SCHEMA = {
    "data": {
        "num_channels": _INT,
        "sample_rate": _INT,
        "frame_ms": _FLOAT,
        "hop_ms": _FLOAT,
        "fft_size": _INT,
        "stack_left": _INT,
        "downsample": _INT,
        "vocab_size": _INT,
        "tokens_min": _INT,
        "tokens_max": _INT,
        "tone_ms": _FLOAT,
        "delays": _int_list,
        "gains": _float_list,
        "noise_std": _float_list,
        "seed": _INT,
        "n_utterances": _INT,
        "split_ratios": _float_list,
    },
    "model": {
        "num_channels": _INT,
        "d_model": _INT,
        "d_ff": _INT,
        "n_heads": _INT,
        "n_enc_layers": _INT,
        "n_dec_layers": _INT,
        "vocab_size": _INT,
        "label_smoothing": _FLOAT,
        "use_csa": _bool,
        "use_cca": _bool,
        "dropout": _FLOAT,
        "qkv_activation": str,
        "f_mag": _INT,
        "f_pha": _INT,
    },
    "training": {
        "batch_size": _INT,
        "max_steps": _INT,
        "warmup_steps": _INT,
        "seed": _INT,
        "checkpoint_every": _INT,
        "eval_every": _INT,
        "grad_clip_norm": _FLOAT,
        "eval_utterances": _INT,
    },
    "decode": {
        "beam_size": _INT,
        "length_norm": _bool,
        "max_len": _INT,
    },
}


def load_config(path) -> dict:
    """Parse and type-check an INI config; returns {section: {key: value}}."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except (configparser.Error, OSError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e

    out: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        out[section] = {}
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}] of {path}")
            try:
                out[section][key] = _SCHEMA[section][key](raw)
            except ValueError as e:
                raise ConfigError(f"bad value for {key!r} in [{section}]: {e}") from e
    return out


def scene_config(cfg: dict, seed_override: int | None = None) -> SceneConfig:
    data = dict(cfg.get("data", {}))
    data.pop("n_utterances", None)
    data.pop("split_ratios", None)
    if seed_override is not None:
        data["seed"] = seed_override
    try:
        return SceneConfig(**data)
    except TypeError as e:
        raise ConfigError(f"bad [data] section: {e}") from e


def dataset_size(cfg: dict) -> tuple[int, tuple]:
    data = cfg.get("data", {})
    n = data.get("n_utterances", 2400)
    ratios = data.get("split_ratios", (0.84, 0.08, 0.08))
    return n, ratios


def model_config(cfg: dict) -> ModelConfig:
    """Build a ModelConfig; channel count, vocab, and feature dims default
    from the [data] section when not given explicitly under [model]."""
    model = dict(cfg.get("model", {}))
    data = cfg.get("data", {})
    if "num_channels" not in model and "num_channels" in data:
        model["num_channels"] = data["num_channels"]
    if "vocab_size" not in model and "vocab_size" in data:
        model["vocab_size"] = data["vocab_size"] + NUM_SPECIAL_TOKENS
    if "f_mag" not in model or "f_pha" not in model:
        fft_size = data.get("fft_size", 128)
        stack_left = data.get("stack_left", 2)
        f_mag, f_pha = feature_dims(fft_size, stack_left)
        model.setdefault("f_mag", f_mag)
        model.setdefault("f_pha", f_pha)
    try:
        return ModelConfig(**model)
    except TypeError as e:
        raise ConfigError(f"bad [model] section: {e}") from e


def train_run_config(cfg: dict, seed_override: int | None = None) -> TrainRunConfig:
    training = dict(cfg.get("training", {}))
    if seed_override is not None:
        training["seed"] = seed_override
    try:
        return TrainRunConfig(**training)
    except TypeError as e:
        raise ConfigError(f"bad [training] section: {e}") from e


def decode_options(cfg: dict) -> dict:
    return dict(cfg.get("decode", {}))
