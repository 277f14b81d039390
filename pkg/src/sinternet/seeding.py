"""Named random substreams derived from a single run seed.

Every source of randomness in the package (powder deposition, weight
init, epoch shuffling, dropout masks, ...) pulls its generator from
`substream(seed, name)`. Distinct names give statistically independent
streams, and any component can be reproduced in isolation from the run
seed plus its stream name.
"""

import numpy as np

__all__ = ["substream"]


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the given run seed and stream name.

    The same (seed, name) pair always yields an identical stream;
    numpy's SeedSequence guarantees this across processes and platforms.
    """
    entropy = [int(seed)] + list(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy))
