"""Named, counter-based random streams.

All randomness flows from one master seed. A stream is identified by the seed
and a key of integers or names, e.g. ``make_rng(7, "episode", 3, "play")``.
Streams use numpy's Philox bit generator, a counter-based generator whose
output is bit-exact across platforms, seeded through ``SeedSequence`` so that
distinct keys give statistically independent streams.
"""

import zlib
from typing import Union

import numpy as np

KeyPart = Union[int, str]


def _key_to_int(part: KeyPart) -> int:
    """Map a key part to a non-negative integer."""
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"Stream key parts must be non-negative, got {part}.")
    return int(part)


def seed_sequence(seed: int, *key: KeyPart) -> np.random.SeedSequence:
    """Return the seed sequence of stream ``key`` under master ``seed``."""
    return np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(_key_to_int(part) for part in key)
    )


def make_rng(seed: int, *key: KeyPart) -> np.random.Generator:
    """Return a Philox generator for stream ``key`` under master ``seed``.

    .. rubric:: Examples

    >>> from finequeue.streams import make_rng
    >>> make_rng(0, "episode", 1).random() == make_rng(0, "episode", 1).random()
    True

    """
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *key)))
