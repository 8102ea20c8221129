"""Seed-stream derivation.

A single master seed is expanded into independent named streams with
``numpy.random.SeedSequence``.  The derivation is a pure function of
(master seed, stream name, stream index), so any module can re-derive
its stream without global state and results do not depend on how work
is split across threads.
"""

from __future__ import annotations

import zlib

import numpy as np

MASTER_SEED_DEFAULT = 20240801


def _name_key(name: str) -> int:
    # stable 32-bit hash of the stream name (Python's hash() is salted)
    return zlib.crc32(name.encode("utf-8"))


def stream(master_seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Return the generator for stream ``name``/``index`` under ``master_seed``."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(_name_key(name), index))
    return np.random.Generator(np.random.Philox(seq))

def substream_seed(master_seed: int, name: str, index: int = 0) -> int:
    """A 64-bit seed derived the same way, for APIs that take plain ints."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(_name_key(name), index))
    return int(seq.generate_state(1, np.uint64)[0])
