"""Deterministic RNG derivation.

All randomness in a run flows from one root seed. Child streams are
derived by hashing a string label (FNV-1a, 64-bit) and feeding
``(root_seed, label_hash)`` into numpy's SeedSequence, so every phase
("vae-init", "ldm-train", "sample-0007", ...) gets an independent,
reproducible generator regardless of call order.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; platform-stable token hashing."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def derive_seed(root_seed: int, label: str) -> int:
    """Map (root seed, label) to a 64-bit child seed."""
    return fnv1a64(f"{root_seed}:{label}".encode("utf-8"))


def rng_for(root_seed: int, label: str) -> np.random.Generator:
    """Independent generator for one phase of a run."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(root_seed, label)))
