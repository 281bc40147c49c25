"""Deterministic derived RNG streams.

Every random decision in the package draws from a child generator keyed by a
base seed plus a tuple of string/int tags (purpose, epoch, image id, ...).
Keys are hashed with BLAKE2 rather than Python's ``hash`` so streams are
stable across processes and interpreter versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Child generator for ``(seed, *keys)``, independent across distinct keys."""
    h = hashlib.blake2b(digest_size=16)
    for key in keys:
        h.update(repr(key).encode("utf-8"))
        h.update(b"\x1f")
    digest = int.from_bytes(h.digest(), "little")
    entropy = [int(seed) & _MASK64, digest & _MASK64, digest >> 64]
    return np.random.default_rng(np.random.SeedSequence(entropy))
