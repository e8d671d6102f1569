from enum import IntEnum

import numpy as np


class Purpose(IntEnum):
    """Top-level spawn key separating the independent uses of one master seed."""
    MASTER = 0
    CONTINUATION = 1
    REFINE = 2
    INITIAL = 3


def substream(master_seed: int, purpose: Purpose, *indices: int) -> np.random.Generator:
    """
    Philox generator keyed by (purpose, *indices) under master_seed.

    Equivalent to walking SeedSequence.spawn() children, but addressable
    directly, so replication j of run s gets the same stream regardless of
    how replications are grouped into blocks, threads or worker tasks.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=(int(purpose), *indices))
    return np.random.Generator(np.random.Philox(seq))


def substreams(master_seed: int, purpose: Purpose, prefix: tuple[int, ...], count: int,
               offset: int = 0) -> list[np.random.Generator]:
    """Generators for replications offset..offset+count-1 under a common key prefix."""
    return [substream(master_seed, purpose, *prefix, offset + j) for j in range(count)]
