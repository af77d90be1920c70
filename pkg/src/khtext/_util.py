"""Seed derivation shared by training code and the CLI.

Every run owns a single user-facing seed; module RNGs are derived from it
with stable tags so the whole pipeline is reproducible from one number.
"""

from __future__ import annotations

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    h = _FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def derive_seed(seed: int, *tags: object) -> int:
    """Stable non-zero 64-bit sub-seed for (seed, tags)."""
    key = "|".join([str(seed), *map(str, tags)]).encode("utf-8")
    h = fnv1a_64(key)
    return h if h != 0 else _FNV64_OFFSET
