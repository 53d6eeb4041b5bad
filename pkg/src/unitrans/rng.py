"""Named, reproducible random stream derivation.

Every random draw in the pipeline flows from one top-level seed through
`derive_rng(seed, *keys)`. String keys are hashed with crc32 (stable
across platforms and Python processes, unlike built-in hash()), so any
component can be re-run in isolation and reproduce its stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_entropy(key: str | int) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_rng(seed: int, *keys: str | int) -> np.random.Generator:
    """Generator for the stream named by `keys` under `seed`.

    derive_rng(7, "train", 120) is independent of derive_rng(7, "train", 121)
    and of derive_rng(7, "corpus"), but each is identical across calls.
    """
    entropy = [int(seed)] + [_key_entropy(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
