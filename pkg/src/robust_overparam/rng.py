"""Counter-based RNG streams keyed by (seed, purpose tags).

Every random draw in the library comes from a stream derived here, so init,
data generation and per-example attack draws are independent of each other and
reproducible regardless of evaluation order or thread count.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def _tag_to_int(tag) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8")) & _MASK32
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK32
    raise TypeError(f"stream tags must be str or int, got {type(tag).__name__}")


def stream(seed: int, *tags) -> np.random.Generator:
    """Return an independent Philox generator for (seed, tags).

    Same arguments always give bit-identical draws; distinct tag tuples give
    statistically independent streams.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & ((1 << 63) - 1),
        spawn_key=tuple(_tag_to_int(t) for t in tags),
    )
    return np.random.Generator(np.random.Philox(ss))
