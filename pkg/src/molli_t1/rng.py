"""Named, seeded random substreams.

Every random draw in a run is taken from a generator derived from the run
seed plus a stream name (and optional integer indices), so each component
is reproducible on its own and independent of evaluation order.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("curves", "phantom", "motion", "weights", "shuffle", "noise", "schedule", "validation")


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Return a generator for stream ``name`` (and item ``index``) of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_name_key(name), *map(int, index)))
    return np.random.Generator(np.random.PCG64(ss))


def child_entropy(rng: np.random.Generator) -> int:
    """Draw a 64-bit entropy value from ``rng`` for seeding per-item streams."""
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))
