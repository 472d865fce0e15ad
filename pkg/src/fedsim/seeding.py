"""Deterministic seed derivation.

Every source of randomness in the simulator draws from a numpy PCG64
generator seeded through :func:`derive_seed`, so any sub-computation
(a round, a client, a sweep cell) can be reproduced in isolation from
the base seed and its coordinates.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Hash a tuple of coordinates into a 64-bit seed.

    Parts are mixed via their repr, so ints, floats, strings and tuples
    are all fine as coordinates.  Stable across processes and platforms
    (unlike the builtin hash).
    """
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        digest.update(repr(part).encode("utf-8"))
        digest.update(b"\x1f")
    return int.from_bytes(digest.digest(), "little")


def rng_for(*parts: object) -> np.random.Generator:
    """PCG64 generator seeded from the given coordinates."""
    return np.random.default_rng(derive_seed(*parts))
