"""Deterministic random-stream derivation.

Every piece of randomness in a run flows from one config seed through
(seed, tag...) -> stream, so independent tasks (rollouts, batch sampling,
match pairings) draw from reproducible, non-overlapping generators. Tags are
folded with crc32, which is stable across processes and platforms (the
builtin hash is salted per process and must not be used here).
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(seed: int, *tags) -> tuple[int, ...]:
    key = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            key.append(int(tag) & 0xFFFFFFFF)
        else:
            key.append(zlib.crc32(str(tag).encode("utf-8")))
    return tuple(key)


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Generator for the stream named by (seed, tags...)."""
    return np.random.default_rng(np.random.SeedSequence(stream_key(seed, *tags)))
