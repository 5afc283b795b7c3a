"""Seed derivation and portable random draws.

Everything that samples derives its stream from :func:`derive_seed`, so results
are reproducible across machines and Python versions. Only ``Random.random()``
carries a cross-version stability guarantee, hence the hand-rolled draws below.
"""

from __future__ import annotations

import hashlib
import math
import random
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def derive_seed(*parts: object) -> int:
    """Hash arbitrary labels into a 64-bit seed."""
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seeded_rng(*parts: object) -> random.Random:
    return random.Random(derive_seed(*parts))


def draw(rng: random.Random, items: Sequence[T], k: int) -> list[T]:
    """Sample k items without replacement, driven only by rng.random()."""
    if k > len(items):
        raise ValueError(f"cannot draw {k} items from a pool of {len(items)}")
    pool = list(items)
    out: list[T] = []
    for _ in range(k):
        i = int(rng.random() * len(pool))
        out.append(pool.pop(i))
    return out


def permute(rng: random.Random, items: Sequence[T]) -> list[T]:
    """Uniform Fisher-Yates permutation, driven only by rng.random()."""
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.random() * (i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def gauss_vector(rng: random.Random, n: int) -> np.ndarray:
    """n iid standard normals via Box-Muller on rng.random()."""
    out: list[float] = []
    while len(out) < n:
        u1 = rng.random()
        u2 = rng.random()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        out.append(r * math.cos(2.0 * math.pi * u2))
        out.append(r * math.sin(2.0 * math.pi * u2))
    return np.array(out[:n], dtype=float)
