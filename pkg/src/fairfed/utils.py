# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Seed derivation helpers.

Every random decision in fairfed draws from a generator derived from a root seed and
a tuple of non-negative integer keys, so results depend only on (seed, keys) and never
on call order or thread scheduling.
"""

from typing import List, Sequence

import numpy as np

# stream namespaces, so that e.g. (seed, client 0) never collides with (seed, epoch 0)
SPLIT_STREAM = 1
PARTITION_STREAM = 2
CLIENT_STREAM = 3
SYNTH_STREAM = 4
EPOCH_STREAM = 5


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, keys)))


def derive_seed(seed: int, *keys: int) -> int:
    """Return a 63-bit integer seed for the stream identified by ``(seed, *keys)``."""
    state = np.random.SeedSequence(_entropy(seed, keys)).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def client_seed(seed: int, client_id: int, round_index: int) -> int:
    """Seed of one client's local training in one global round."""
    return derive_seed(seed, CLIENT_STREAM, client_id, round_index)


def _entropy(seed: int, keys: Sequence[int]) -> List[int]:
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError(f"seeds and stream keys must be non-negative: {seed}, {tuple(keys)}")
    return [seed, *keys]
