"""Deterministic random streams.

Every random draw in the lab comes from a Philox counter-based generator
keyed by (master seed, domain, index).  Philox is stateless in the sense
that the key alone determines the stream, so any consumer can be handed an
independent stream without coordinating with the others: sequence i of the
training split always sees the same bits for a given seed, no matter how
many sequences were generated before it or on how many workers.

Key layout: the 128-bit Philox key is (seed, domain << 48 | index).
Domains are 16-bit codes enumerated below; indices are 48-bit (per-sequence,
per-trial, and so on).  Never renumber a domain: stream identity is part of
every on-disk artifact.
"""

from __future__ import annotations

import numpy as np

# Domain codes.
GT_MODEL = 1        # ground-truth model weights (v, w)
DATA_TRAIN = 2      # per-sequence draws, training split (index = sequence)
DATA_VAL = 3
DATA_TEST = 4
INIT = 5            # cell/head weight initialization
DROPOUT = 6         # dropout masks during one training run
SHUFFLE = 7         # minibatch order
SEARCH = 8          # hyperparameter sampling (index = trial)
TRIAL = 9           # per-trial training seed derivation (index = trial)
DIGITS_TRAIN = 10   # procedural digit images (index = image)
DIGITS_VAL = 11
DIGITS_TEST = 12

_MASK64 = (1 << 64) - 1
_MASK48 = (1 << 48) - 1


def stream(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    """Return the generator for (seed, domain, index).

    The same triple always yields the same stream; distinct triples yield
    independent streams.
    """
    if not 0 <= domain < (1 << 16):
        raise ValueError(f"domain out of range: {domain}")
    if index < 0:
        raise ValueError(f"index must be nonnegative: {index}")
    key = np.array(
        [seed & _MASK64, (domain << 48) | (index & _MASK48)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, domain: int, index: int = 0) -> int:
    """Derive a child seed (for nested runs such as search trials)."""
    return int(stream(seed, domain, index).integers(0, 1 << 63))
