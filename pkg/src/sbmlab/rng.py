"""Counter-derived random streams.

Every replicate gets its own generator, derived from (master seed, stream
tag, replicate index) through numpy's SeedSequence, so results do not
depend on how replicates are spread across workers.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag(name: str) -> int:
    return zlib.crc32(name.encode("utf8"))


def stream(master_seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for (master_seed, name, index...)."""
    ss = np.random.SeedSequence([int(master_seed) & (2 ** 64 - 1), _tag(name), *map(int, index)])
    return np.random.Generator(np.random.PCG64(ss))


def streams(master_seed: int, name: str, n: int, offset: int = 0):
    return [stream(master_seed, name, offset + i) for i in range(n)]
