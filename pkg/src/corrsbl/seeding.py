"""Deterministic per-trial seeds via splitmix64 mixing."""
from __future__ import annotations

import zlib

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master: int, *keys: int | str) -> int:
    """Fold ``keys`` into ``master`` one at a time; strings are hashed with CRC-32.

    The seed of a given (experiment, parameter index, trial index) never
    depends on how many trials or parameter values a sweep has.
    """
    h = splitmix64(int(master) & _MASK)
    for k in keys:
        if isinstance(k, str):
            k = zlib.crc32(k.encode())
        h = splitmix64(h ^ (int(k) & _MASK))
    return h
