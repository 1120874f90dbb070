"""Counter-based seed derivation.

Every random draw in a study comes from a stream keyed by the master seed plus
a purpose path such as ``("rayleigh", "test", "background", 1, 42)``. Adding a
new purpose never shifts the streams of existing ones.
"""
from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

SeedKey = Union[str, int]
SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("Seed keys must be str or int, not bool.")
    if isinstance(key, (int, np.integer)):
        value = int(key)
        if value < 0:
            raise ValueError(f"Integer seed keys must be >= 0, got {value}.")
        return value
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(master: int, *keys: SeedKey) -> np.random.SeedSequence:
    if int(master) < 0:
        raise ValueError(f"Master seed must be >= 0, got {master}.")
    spawn_key = tuple(_key_to_int(key) for key in keys)
    return np.random.SeedSequence(entropy=int(master), spawn_key=spawn_key)


def derive_seed(master: int, *keys: SeedKey) -> int:
    """Return a 63-bit integer seed for the stream ``(master, *keys)``."""
    state = seed_sequence(master, *keys).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
