"""Seeded random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator (128-bit
state, 64-bit output). The same seed always yields the same stream, so any
two consumers that draw in the same order see identical values.
"""

import numpy as np

ALGORITHM = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.PCG64(seed))


def standard_normal(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    # draw in float64 then round so float32 and float64 callers share a stream
    return rng.standard_normal(shape).astype(dtype)
