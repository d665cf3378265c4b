"""
Keyed random streams.

Every stream is addressed by (master_seed, common_index, player_index,
channel) and built on the counter-based Philox generator, so draws never
depend on scheduling, worker count or population size.
"""

import hashlib
from typing import Tuple

import numpy as np

CHANNEL_COMMON = 0
CHANNEL_IDIO_A = 1
CHANNEL_IDIO_N = 2

# The common channel is not attached to any player.
COMMON_PLAYER = 0

MAX_SEED = 2**64 - 1


def stream_key(
    master_seed: int, common_index: int, player_index: int, channel: int
) -> Tuple[int, int, int, int]:
    if not 0 <= master_seed <= MAX_SEED:
        raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    if common_index < 0 or player_index < 0:
        raise ValueError("stream indices must be non-negative")
    if channel not in (CHANNEL_COMMON, CHANNEL_IDIO_A, CHANNEL_IDIO_N):
        raise ValueError(f"unknown channel {channel}")
    return master_seed, common_index, player_index, channel


def stream(
    master_seed: int, common_index: int, player_index: int, channel: int
) -> np.random.Generator:
    seed, common, player, chan = stream_key(master_seed, common_index, player_index, channel)
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(common, player, chan))
    return np.random.Generator(np.random.Philox(sequence))


def stream_id(master_seed: int, common_index: int, player_index: int, channel: int) -> str:
    """Short stable identifier of a stream, for provenance records."""
    key = stream_key(master_seed, common_index, player_index, channel)
    return hashlib.sha256(",".join(str(k) for k in key).encode()).hexdigest()[:16]


def brownian_increments(
    master_seed: int,
    common_index: int,
    player_index: int,
    channel: int,
    n_steps: int,
    dt: float,
    substeps: int = 1,
) -> np.ndarray:
    """
    Brownian increments over `n_steps` steps of length `dt`.

    The stream is drawn at `n_steps * substeps` finer steps and summed back
    in blocks, so the same Brownian path is seen at every `n_steps` dividing
    the fine resolution.
    """
    gen = stream(master_seed, common_index, player_index, channel)
    fine = gen.standard_normal(n_steps * substeps) * np.sqrt(dt / substeps)
    if substeps == 1:
        return fine
    return fine.reshape(n_steps, substeps).sum(axis=1)
