"""Seeded, splittable random streams.

Every generator in the package draws from ``stream(seed, *keys)``. Keys are
folded into the ``SeedSequence`` spawn key, so the stream for
``(seed, "dynamics", 7)`` is the same whether the bundle has 8 systems or 800.
"""

import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported stream key {key!r}")


def seed_sequence(seed, *keys):
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {seed!r}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))


def stream(seed, *keys):
    """Return an independent ``numpy.random.Generator`` for ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed, *keys):
    """Collapse ``(seed, *keys)`` to a fresh 63-bit integer seed."""
    return int(seed_sequence(seed, *keys).generate_state(2, np.uint32).view(np.uint64)[0] >> 1)
