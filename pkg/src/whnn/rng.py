"""Named random streams derived from one integer seed."""

import zlib

import numpy as np

STREAMS = ("init", "dropout", "split", "search", "data")


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component ``name``; stable across runs and platforms."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def derive_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(0, 2**31 - 1))
