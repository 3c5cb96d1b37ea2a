"""Deterministic seed derivation for every stochastic component."""
import zlib
from typing import Union

import numpy as np

SEED_MASK = (1 << 64) - 1


def _key_entropy(key: Union[str, int]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & SEED_MASK


def derive_seed(master: int, *keys: Union[str, int]) -> int:
    """
    Derive a stable 64-bit child seed from a master seed and a key path.

    Args:
        master: Master seed of the run
        keys: Names (or indices) identifying the component, e.g. ``("split", 2)``

    Returns:
        Child seed in [0, 2**64)
    """
    entropy = [int(master) & SEED_MASK] + [_key_entropy(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def make_rng(master: int, *keys: Union[str, int]) -> np.random.Generator:
    """Random generator for the component named by ``keys``."""
    return np.random.default_rng(derive_seed(master, *keys))
