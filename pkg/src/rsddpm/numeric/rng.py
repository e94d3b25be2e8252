"""Deterministic random streams.

A stream is identified by (algorithm name, 64-bit seed). The only algorithm
is the counter-based Philox generator, which produces the same sequence on
every platform; the name is stored in configs and checkpoints so a run can be
replayed exactly.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

PHILOX = "philox4x64"


class Rng:
    """Named, seeded random stream with derivable child streams."""

    def __init__(self, seed: int, algorithm: str = PHILOX, _spawn_key: tuple[int, ...] = ()):
        if algorithm != PHILOX:
            raise ValueError(f"unknown rng algorithm {algorithm!r}; only {PHILOX!r} is supported")
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.algorithm = algorithm
        self.seed = int(seed)
        self._spawn_key = _spawn_key
        seq = np.random.SeedSequence(self.seed, spawn_key=_spawn_key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key: int) -> "Rng":
        """Independent stream derived from this stream's identity and ``key``.

        Pure function of (seed, key): re-deriving the same child replays the
        same sequence, regardless of draws made from the parent.
        """
        return Rng(self.seed, self.algorithm, _spawn_key=self._spawn_key + tuple(int(k) for k in key))

    def normal(self, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=dtype)

    def uniform(self, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
        return self._gen.random(shape, dtype=dtype)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers in [low, high] inclusive."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def shuffled(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian(rng: Rng, shape: tuple[int, ...], dtype=np.float32, requires_grad: bool = False) -> Tensor:
    """Tensor of i.i.d. standard-normal entries; advances the stream."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ValueError(f"gaussian: shape must be non-empty with positive dims, got {shape}")
    return Tensor(rng.normal(shape, dtype=dtype), requires_grad=requires_grad)
