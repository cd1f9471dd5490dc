"""Splittable counter-based random streams.

A run seed fans out into independent Philox streams keyed by string or
integer labels, so the numbers a consumer sees never depend on the order in
which other consumers drew theirs.
"""

import zlib
from typing import Tuple, Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf8"))


def spawn_key(*keys: Key) -> Tuple[int, ...]:
    """Turn a path of labels into a ``SeedSequence`` spawn key."""
    return tuple(_key_to_int(key) for key in keys)


def generator(seed: int, *keys: Key) -> np.random.Generator:
    """Return the Philox generator for ``seed`` at the labelled path.

    Parameters
    ----------
    seed : int
        The run seed.
    *keys : int or str
        Labels identifying the consumer, e.g. ``("dropout", 17)``.

    Returns
    -------
    numpy.random.Generator
        A fresh generator; identical arguments give identical streams.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(*keys))
    return np.random.Generator(np.random.Philox(sequence))


def fan_in_uniform(
    shape: Tuple[int, ...], fan_in: int, seed: int, *keys: Key
) -> np.ndarray:
    """Draw weights uniformly from ``±sqrt(6 / fan_in)``."""
    bound = np.sqrt(6.0 / max(int(fan_in), 1))
    return generator(seed, "init", *keys).uniform(-bound, bound, size=shape)
