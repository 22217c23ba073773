"""Named random substreams derived from one master seed.

Every stream is keyed by ``(master_seed, purpose, round, *extra)`` through
:class:`numpy.random.SeedSequence`, so draws never depend on call order or on
which worker consumes them.
"""

import numpy as np

PURPOSES = {
    "selection": 0,
    "fading": 1,
    "noise": 2,
    "data": 3,
    "init": 4,
    "batch": 5,
    "shard": 6,
}


def stream(master_seed: int, purpose: str, round_: int = 0, *extra: int) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    key = (PURPOSES[purpose], int(round_)) + tuple(int(e) for e in extra)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))
