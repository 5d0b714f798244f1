"""Named random sub-streams derived from one master seed.

Every component (surrogate fit, each chain, PIT randomization, fold
assignment, ...) draws from its own stream so that adding or removing a
component never perturbs the others. Streams are keyed by a name and an
optional integer index through ``numpy.random.SeedSequence`` spawn keys,
which is counter based and platform independent.
"""

from __future__ import annotations

import zlib

import numpy as np

MAX_SEED = 2**64 - 1


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Return an independent generator for component ``name`` (cell ``index``)."""
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=(_name_key(name), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def subseed(seed: int, name: str, index: int = 0) -> int:
    """A derived 64-bit integer seed, for handing to code that wants an int."""
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=(_name_key(name), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
