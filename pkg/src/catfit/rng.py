"""Named random substreams derived from a single root seed.

Every consumer of randomness asks for its own stream, keyed by a name and
optional integer indices, so adding or reordering consumers never shifts
the draws seen by another one.
"""
import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, *index)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name), *(int(i) for i in index)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
