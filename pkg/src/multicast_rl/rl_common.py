"""Replay memories, step-size and exploration schedules, simplex projection."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Generic, TypeVar

import numpy as np

T = TypeVar("T")

BETA_MAX = 10.0


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one component, derived from the master seed and a fixed label."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(label.encode())]))


def uniform_indices(size: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` slots drawn uniformly; without replacement unless fewer than ``n`` exist."""
    if size == 0:
        raise RuntimeError("cannot sample from an empty replay memory")
    if size < n:
        return rng.integers(size, size=n)
    return rng.choice(size, size=n, replace=False)


class ReplayMemory(Generic[T]):
    """Fixed-capacity ring buffer; the oldest item is overwritten first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: list[T] = []
        self.pushes = 0

    def __len__(self) -> int:
        return len(self.items)

    def push(self, item: T) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.pushes % self.capacity] = item
        self.pushes += 1

    def ordered(self) -> list[T]:
        """Contents from oldest to newest."""
        if len(self.items) < self.capacity:
            return list(self.items)
        k = self.pushes % self.capacity
        return self.items[k:] + self.items[:k]

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return uniform_indices(len(self), n, rng)

    def sample_minibatch(self, n: int, rng: np.random.Generator) -> list[T]:
        return [self.items[i] for i in self.sample_indices(n, rng)]


def _loglog(t: float) -> float:
    return max(1.0, math.log(math.log(max(t, 3.0))))


@dataclass(frozen=True)
class Schedule:
    """Step size as a function of the iteration counter.

    ``kind`` is ``"constant"`` (always ``a``), ``"inverse"`` (``a / (1 + b t)``)
    or ``"inverse_loglog"`` (``a / (1 + b t loglog t)``).
    """

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "inverse", "inverse_loglog"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.a < 0 or self.b < 0:
            raise ValueError("schedule coefficients must be non-negative")

    @classmethod
    def constant(cls, a: float) -> "Schedule":
        return cls("constant", a)

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.a
        if self.kind == "inverse":
            return self.a / (1.0 + self.b * t)
        return self.a / (1.0 + self.b * t * _loglog(t))

    def satisfies_robbins_monro(self) -> bool:
        """Sum of rates diverges and sum of squares converges (decided by form)."""
        return self.kind != "constant" and self.a > 0 and self.b > 0


def epsilon(t: float, eps0: float = 1.0, decay: float = 0.98, floor: float = 0.01) -> float:
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")
    return max(floor, eps0 * decay**t)


def project_simplex(r) -> np.ndarray:
    """Positive part, renormalized; uniform when nothing is positive."""
    r = np.maximum(np.asarray(r, dtype=float), 0.0)
    s = r.sum()
    if s <= 0 or not np.isfinite(s):
        return np.full(r.shape, 1.0 / r.size)
    return r / s
