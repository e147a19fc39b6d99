"""Deterministic named randomness.

Every stochastic site (init, channel drop, episode sampling, corruption)
draws from its own generator derived from the run seed plus a stable
string/int path, so adding a draw at one site never shifts another.
crc32 keys the string parts — unlike hash(), it is stable across
processes and interpreter restarts.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"negative stream key {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for `path` under `seed`; same inputs, same stream, always."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.default_rng(ss)
