"""Deterministic, splittable random-number streams."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Counter-based Philox stream, reproducible from (seed, path).

    Distinct paths give statistically independent streams, so batches,
    particles, or training steps can each own one and be regenerated in
    isolation.
    """
    key = tuple(p if isinstance(p, int) else zlib.crc32(p.encode()) for p in path)
    seq = np.random.SeedSequence(seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))
