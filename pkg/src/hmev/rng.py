"""Seedable, splittable random streams.

All randomness comes from counter-based Philox generators keyed by a master
seed plus a path of integer or string labels, so any stream can be rebuilt
independently of execution order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("stream labels must be nonnegative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed, *labels):
    """Independent generator for ``(seed, *labels)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(x) for x in labels))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *labels):
    """A 63-bit integer seed for a sub-task, stable across runs."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(x) for x in labels))
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1 << 31, 1], dtype=np.uint64)) & ((1 << 63) - 1)
