"""Dynamic weighted index sampling on a Fenwick tree."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import EmptySamplerError


class WeightedIndexSampler:
    """Draw ``i`` with probability ``w_i / sum(w)`` under point updates.

    Draws and updates cost ``O(log m)`` for ``m`` weights.  Weights are
    non-negative integers, so the sampling law is exact.

    Example:
        >>> s = WeightedIndexSampler([1, 1, 2])
        >>> s.decrement(2)
        >>> s.weights.tolist()
        [1, 1, 1]
    """

    def __init__(self, weights: Sequence[int]):
        w = np.asarray(weights, dtype=np.int64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d sequence")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        self._w = w.copy()
        self._tree = K.ft_build(self._w)
        self._total = int(self._w.sum())

    def __len__(self):
        return self._w.size

    @property
    def weights(self) -> np.ndarray:
        return self._w.copy()

    @property
    def total(self) -> int:
        return self._total

    def prefix(self, i: int) -> int:
        """Sum of weights with index ``< i``."""
        return int(K.ft_prefix(self._tree, i))

    def _check_index(self, i: int):
        if not 0 <= i < self._w.size:
            raise IndexError(f"index {i} outside [0, {self._w.size})")

    def increment(self, i: int, by: int = 1) -> None:
        self._update(i, by)

    def decrement(self, i: int, by: int = 1) -> None:
        self._update(i, -by)

    def _update(self, i: int, delta: int) -> None:
        self._check_index(i)
        if self._w[i] + delta < 0:
            raise ValueError(f"weight {i} would become negative")
        self._w[i] += delta
        self._total += delta
        K.ft_add(self._tree, i, delta)

    def _require_mass(self):
        if self._total <= 0:
            raise EmptySamplerError("all weights are zero")

    def locate(self, r: int) -> int:
        """Index whose cumulative interval contains ``r`` (``0 <= r < total``)."""
        self._require_mass()
        if not 0 <= r < self._total:
            raise ValueError(f"r={r} outside [0, {self._total})")
        idx, _ = K.ft_find(self._tree, r)
        return int(idx)

    def draw(self, rng: np.random.Generator) -> int:
        self._require_mass()
        return self.locate(int(rng.integers(self._total)))

    def draw_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent draws with the current weights."""
        self._require_mass()
        r = rng.integers(self._total, size=size)
        return np.searchsorted(np.cumsum(self._w), r, side="right")
