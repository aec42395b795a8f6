"""Counter-based random streams keyed by (seed, episode, stream).

Philox is counter-based, so every (seed, episode, stream) triple yields an
independent, reproducible generator regardless of scheduling or how many other
episodes were drawn. All randomness in the package flows through here.
"""

from __future__ import annotations

import numpy as np

# Named stream ids; add new ones at the end, never renumber.
STREAM_RESET = 0
STREAM_NOISE = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3
STREAM_SAMPLE = 4


def stream(seed: int, episode: int = 0, stream_id: int = 0) -> np.random.Generator:
    """Independent generator for (seed, episode, stream_id)."""
    bits = np.random.Philox(key=np.array([seed, episode], dtype=np.uint64))
    return np.random.Generator(bits.jumped(stream_id))
