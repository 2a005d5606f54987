"""Small shared helpers: seeded RNG sub-streams and hashing."""

from __future__ import annotations

import hashlib
import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Named, reproducible RNG stream derived from one master seed.

    All randomness in the project flows through these streams so that a
    single ``--seed`` reproduces data generation, initialization, and
    batching independently.
    """
    key = [int(seed), zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(key)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
