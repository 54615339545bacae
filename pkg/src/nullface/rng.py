"""Counter-based noise source with a documented stream layout.

Every draw uses a Philox4x64 bit generator keyed as (seed, stream), where
`stream` identifies the consumer:

    stream = t          noise used to build the noisy latent x_t (t = 1..T)
    stream = 2**32 + k  auxiliary streams (toy data generation, probes)

Philox output is specified bit-exactly by numpy independent of platform,
so records built from a seed replay identically everywhere.
"""

from __future__ import annotations

import numpy as np

AUX_STREAM_BASE = 2**32


def generator(seed: int, stream: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & (2**64 - 1)), np.uint64(stream & (2**64 - 1))])
    return np.random.Generator(np.random.Philox(key=key))


def noise_for_step(seed: int, t: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard-normal f32 noise for the latent at step t."""
    return generator(seed, t).standard_normal(shape, dtype=np.float32)


def aux_generator(seed: int, k: int = 0) -> np.random.Generator:
    return generator(seed, AUX_STREAM_BASE + k)
