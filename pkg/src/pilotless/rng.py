"""Seed derivation.

Every random draw in the package comes from a Philox (counter-based) generator
keyed by the master seed plus a tuple of integers and labels naming the draw's
purpose, e.g. ``("train", step, slot, "noise")``. Two draws with different keys
are independent, and the value of a draw never depends on evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFF_FFFF_FFFF_FFFF
    digest = hashlib.sha256(str(part).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *key) -> int:
    """Stable 64-bit sub-seed for ``(seed, *key)``."""
    h = hashlib.sha256()
    for part in (seed, *key):
        h.update(_word(part).to_bytes(8, "little"))
    return int.from_bytes(h.digest()[:8], "little")


def generator(seed: int, *key) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *key)))
