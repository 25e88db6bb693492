"""Seeded randomness.

All randomness uses numpy's Philox4x32-10 counter-based bit generator, so a
given seed reproduces the same stream on every platform. Independent streams
are derived from ``(seed, *keys)`` through :class:`numpy.random.SeedSequence`,
which keeps composed pipelines reproducible without sharing state.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, default_dtype


def generator(seed: int, *keys: int | str) -> np.random.Generator:
    """Philox generator for the stream identified by ``seed`` and ``keys``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            k = int.from_bytes(k.encode("utf-8")[:16].ljust(16, b"\0"), "little")
        words.append(int(k))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def randn(shape, seed: int, *keys, requires_grad: bool = False) -> Tensor:
    shape = tuple(int(n) for n in shape)
    if not shape or any(n <= 0 for n in shape):
        raise ValueError(f"randn: shape must be non-empty with positive extents, got {shape}")
    data = generator(seed, *keys).standard_normal(shape).astype(default_dtype())
    return Tensor(data, requires_grad=requires_grad)
