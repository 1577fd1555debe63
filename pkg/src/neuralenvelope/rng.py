"""Seed derivation and generator construction.

Every random stream in the package comes from a root seed. Child streams
(per tree node, per epoch, per sweep value) get their seed from
``derive_seed(parent, *keys)``, a splitmix64 mix, so that work can be
scheduled in any order without changing results.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int | str) -> int:
    """Deterministically derive a 64-bit child seed from ``seed`` and ``keys``.

    String keys are folded byte-wise so stage names can be used as keys.
    """
    h = splitmix64(int(seed) & _MASK)
    for key in keys:
        if isinstance(key, str):
            for byte in key.encode("utf-8"):
                h = splitmix64(h ^ byte)
            h = splitmix64(h ^ 0xFF)
        else:
            h = splitmix64(h ^ (int(key) & _MASK))
    return h


def make_rng(seed: int) -> np.random.Generator:
    # PCG64 streams are specified bit-for-bit, so results match across platforms.
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK))
