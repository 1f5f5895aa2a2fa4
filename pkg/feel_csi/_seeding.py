"""
Seed derivation: every random stream is a child of the master seed keyed by
what it is used for, so results never depend on execution order.
"""

import hashlib
from typing import Union

import numpy as np

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"Seed keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed_sequence(master_seed: int, *keys: SeedKey) -> np.random.SeedSequence:
    """SeedSequence for the stream named by ``keys`` under ``master_seed``"""
    return np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(_key_to_int(k) for k in keys)
    )


def derive_rng(master_seed: int, *keys: SeedKey) -> np.random.Generator:
    """Independent generator for (master_seed, *keys)"""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(master_seed, *keys)))
