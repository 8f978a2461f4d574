"""Counter-based random streams.

Every random draw in the package is keyed by an explicit tuple (seed plus
cell/episode coordinates) instead of consuming a shared generator, so
regeneration is independent of draw order, thread count, and process layout.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _digest(parts: tuple) -> bytes:
    raw = repr(parts).encode("utf-8")
    return hashlib.blake2b(raw, digest_size=16).digest()


def stream(*parts) -> np.random.Generator:
    """Return a Generator for the stream identified by the key tuple."""
    d = _digest(parts)
    key = [int.from_bytes(d[:8], "little"), int.from_bytes(d[8:], "little")]
    return np.random.Generator(np.random.Philox(key=key))


def uniform01(*parts) -> float:
    """One U[0,1) draw from the stream identified by the key tuple."""
    d = _digest(parts)
    # 53-bit mantissa trick; avoids Generator construction for single draws.
    return (int.from_bytes(d[:8], "little") >> 11) * (1.0 / (1 << 53))
