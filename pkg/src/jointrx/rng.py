"""Deterministic random-number streams.

All randomness flows through Philox, a counter-based 64-bit generator,
keyed through :class:`numpy.random.SeedSequence`. A stream is addressed by
a path of integers ``(master, *path)``: the master seed is the entropy and
the remaining integers form the spawn key. Streams with different paths
are statistically independent, and a stream's output depends only on its
path, never on how many other streams were consumed before it. The Monte
Carlo harness keys per-frame streams as

    (master_seed, snr_index, frame_index, stream_id)

which makes every simulated frame reproducible in isolation and makes
results independent of the worker count.
"""

from __future__ import annotations

import numpy as np

# Stream ids, one per independent source of randomness inside a frame.
STREAM_INFO_BITS = 0
STREAM_PILOTS = 1
STREAM_INTERLEAVER = 2
STREAM_CHANNEL = 3
STREAM_NOISE = 4


def philox(master: int, *path: int) -> np.random.Generator:
    """Return the Philox generator addressed by ``(master, *path)``."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))


def frame_rng(master: int, snr_index: int, frame_index: int, stream: int) -> np.random.Generator:
    """Generator for one randomness stream of one simulated frame."""
    return philox(master, snr_index, frame_index, stream)


def derive_interleaver_seed(master: int, snr_index: int, frame_index: int) -> int:
    """64-bit interleaver seed for a frame, derived from its stream path."""
    rng = frame_rng(master, snr_index, frame_index, STREAM_INTERLEAVER)
    return int(rng.integers(0, 2**63))
