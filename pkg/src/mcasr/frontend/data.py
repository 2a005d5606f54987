"""Dataset persistence: binary feature files and JSONL manifests.

Feature file layout (little-endian): magic ``MCTF``, version u32, T u32,
F_mag u32, F_pha u32, then row-major float32 mag followed by pha.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from .features import ChannelFeatures, stft_features
from .synth import SceneConfig, generate_utterance, utterance_rng

MAGIC = b"MCTF"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")

SPLIT_NAMES = ("train", "valid", "test")


def write_features(path, feats: ChannelFeatures) -> None:
    t, f_mag = feats.mag.shape
    f_pha = feats.pha.shape[1]
    try:
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, t, f_mag, f_pha))
            f.write(np.ascontiguousarray(feats.mag, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(feats.pha, dtype="<f4").tobytes())
    except OSError as e:
        raise DataError(f"cannot write feature file {path}: {e}") from e


def read_features(path) -> ChannelFeatures:
    try:
        with open(path, "rb") as f:
            header = f.read(_HEADER.size)
            if len(header) < _HEADER.size:
                raise DataError(f"feature file {path} is truncated")
            magic, version, t, f_mag, f_pha = _HEADER.unpack(header)
            if magic != MAGIC:
                raise DataError(f"{path} is not a feature file (bad magic {magic!r})")
            if version != VERSION:
                raise DataError(f"{path}: unsupported feature file version {version}")
            mag = np.frombuffer(f.read(4 * t * f_mag), dtype="<f4").reshape(t, f_mag)
            pha = np.frombuffer(f.read(4 * t * f_pha), dtype="<f4").reshape(t, f_pha)
    except OSError as e:
        raise DataError(f"cannot read feature file {path}: {e}") from e
    return ChannelFeatures(
        mag=mag.astype(np.float64), pha=pha.astype(np.float64), utterance_id=str(path)
    )


def write_manifest(path, entries) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for entry in entries:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    except OSError as e:
        raise DataError(f"cannot write manifest {path}: {e}") from e


def read_manifest(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e


def build_dataset(cfg: SceneConfig, n_utterances: int, split_ratios, out_dir) -> dict:
    """Generate, featurize, and persist a dataset; seed-deterministic.

    Returns ``{split_name: manifest_path}``.
    """
    ratios = [float(r) for r in split_ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split_ratios must be three nonnegative values summing to 1, got {ratios}")
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)

    # split assignment is a deterministic permutation of utterance indices
    perm = np.random.default_rng([cfg.seed, 0x5EED]).permutation(n_utterances)
    n_train = int(round(ratios[0] * n_utterances))
    n_valid = int(round(ratios[1] * n_utterances))
    split_of = {}
    for pos, idx in enumerate(perm):
        if pos < n_train:
            split_of[int(idx)] = "train"
        elif pos < n_train + n_valid:
            split_of[int(idx)] = "valid"
        else:
            split_of[int(idx)] = "test"

    manifests = {name: [] for name in SPLIT_NAMES}
    for idx in range(n_utterances):
        utt_id = f"utt{idx:05d}"
        waves, tokens = generate_utterance(cfg, utterance_rng(cfg, idx))
        channel_paths = []
        num_frames = None
        for c, wave in enumerate(waves):
            feats = stft_features(
                wave,
                cfg.sample_rate,
                frame_ms=cfg.frame_ms,
                hop_ms=cfg.hop_ms,
                fft_size=cfg.fft_size,
                stack_left=cfg.stack_left,
                downsample=cfg.downsample,
                utterance_id=utt_id,
            )
            num_frames = feats.num_frames
            rel = f"features/{utt_id}_ch{c}.mctf"
            write_features(out_dir / rel, feats)
            channel_paths.append(rel)
        manifests[split_of[idx]].append(
            {
                "utterance_id": utt_id,
                "channel_paths": channel_paths,
                "transcript": tokens,
                "num_frames": num_frames,
            }
        )

    paths = {}
    for name in SPLIT_NAMES:
        path = out_dir / f"{name}.jsonl"
        write_manifest(path, manifests[name])
        paths[name] = path
    return paths
