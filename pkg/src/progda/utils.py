"""Shared helpers: named deterministic RNG streams and count rounding."""

from __future__ import annotations

import math
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the named stream of a root seed.

    Streams with different names are statistically independent, and the
    same (seed, name) pair always yields the same stream.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(key,))
    )


def derive(seed: int, name: str) -> int:
    """Derive a child seed from (seed, name), for handing to other components."""
    return int(stream(seed, name).integers(0, 1 << 63))


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero toward +inf.

    A 1e-9 nudge absorbs float noise in products like 0.6 * 0.05 * 1000
    that land an ulp below an exact half or integer.
    """
    return int(math.floor(x + 0.5 + 1e-9))
