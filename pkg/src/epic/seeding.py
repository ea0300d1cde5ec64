"""Labeled seed derivation.

Every random stream in a run is derived from one master seed plus a tuple of
labels, so that work can be scheduled in any order (or in parallel) without
changing any drawn value.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Return a 64-bit seed that depends only on ``master`` and ``labels``."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
