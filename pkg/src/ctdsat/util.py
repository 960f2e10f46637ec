"""Shared plumbing: content hashing, seeded RNG streams, canonical JSON."""
from __future__ import annotations

import json

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Stream tags keep independently seeded subsystems from colliding on the
# same (seed, index) pair.
STREAM_FORMULA = 1
STREAM_TRAJECTORY = 2
STREAM_BASIN = 3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hash_hex(value: int) -> str:
    return f"{value:016x}"


def substream(seed: int, stream: int, index: int) -> np.random.Generator:
    """Counter-based generator for (seed, stream, index).

    Philox keyed through SeedSequence spawn keys, so any number of streams
    can be drawn independently and reproducibly from one 64-bit seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64,
                                spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def canonical_json(obj) -> str:
    """Deterministic JSON used for run ids and echoed configs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
