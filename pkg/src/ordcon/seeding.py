"""Deterministic seed derivation.

Every random draw in the package flows through a generator derived here from
a master seed plus a path of labels, so independent components never share
streams and no global RNG state is touched. String path components are hashed
with crc32; integers are used directly.
"""

from __future__ import annotations

import zlib

import numpy as np


def _spawn_key(path):
    key = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            key.append(int(part) % (1 << 32))
        elif isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        else:
            raise TypeError(f"seed path components must be int or str, got {type(part)!r}")
    return tuple(key)


def derive_seed(master, *path):
    """Return a uint32 seed derived from `master` and a label path."""
    seq = np.random.SeedSequence(int(master), spawn_key=_spawn_key(path))
    return int(seq.generate_state(1, np.uint32)[0])


def derive_rng(master, *path):
    """Return an independent numpy Generator for (`master`, path)."""
    seq = np.random.SeedSequence(int(master), spawn_key=_spawn_key(path))
    return np.random.default_rng(seq)
