"""Seeded random streams.

All randomness derives from one integer seed. Each consumer draws from a
named stream, and within a stream each trial or sample gets its own child
keyed by its index::

    SeedSequence(seed, spawn_key=(STREAMS[name], *index))

Child ``i`` depends only on ``(seed, name, i)``, so adding trials or samples
never changes the ones drawn before.
"""
import numpy as np

STREAMS = {
    "baseline": 1,
    "smoothgrad": 2,
    "closed_path": 3,
    "inputs": 4,
    "fixtures": 5,
    "check_gradients": 6,
}


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    key = (STREAMS[name],) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
