"""Deterministic random-stream derivation.

A master seed splits into independent substreams keyed by a label and an
optional path index.  Keys are derived as

    key = first 8 bytes of sha256(f"{seed}:{label}") as a little-endian uint64

and fed to a counter-based Philox generator together with the path index,
so the stream of path i never depends on how many other paths are drawn or
in which order.  Parallel schedules therefore cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Generator for substream (label, index) of the master seed."""
    return np.random.Generator(np.random.Philox(key=(derive_key(seed, label), index)))


def path_normals(seed: int, label: str, n_paths: int, shape: tuple) -> np.ndarray:
    """Stack standard normals, one keyed stream per path; result (n_paths, *shape)."""
    out = np.empty((n_paths,) + tuple(shape))
    for i in range(n_paths):
        out[i] = stream(seed, label, i).standard_normal(shape)
    return out
