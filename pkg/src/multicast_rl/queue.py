"""Multicast queue with request merging, a defer queue, and randomized post-service strategy."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

import numpy as np


class Action(IntEnum):
    RETRANSMIT = 0
    LOOPBACK = 1
    DEFER = 2


@dataclass
class QueueEntry:
    """A file together with every pending arrival time, keyed by requesting user."""

    file: int
    arrivals: dict[int, list[float]] = field(default_factory=dict)

    @property
    def users(self) -> set[int]:
        return set(self.arrivals)

    def add(self, user: int, when: float) -> None:
        self.arrivals.setdefault(user, []).append(when)

    def absorb(self, other: "QueueEntry") -> None:
        for user, times in other.arrivals.items():
            self.arrivals.setdefault(user, []).extend(times)

    def num_arrivals(self) -> int:
        return sum(len(t) for t in self.arrivals.values())


@dataclass(frozen=True)
class StrategyParams:
    """Probabilities of retransmit, loopback, defer for a partially failed service."""

    p: tuple[float, float, float]

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if len(p) != 3 or min(p) < 0 or max(p) > 1 or abs(sum(p) - 1.0) > 1e-9:
            raise ValueError(f"strategy probabilities must lie on the simplex, got {self.p}")
        object.__setattr__(self, "p", p)

    @classmethod
    def pure(cls, action: Action) -> "StrategyParams":
        p = [0.0, 0.0, 0.0]
        p[int(action)] = 1.0
        return cls(tuple(p))

    def as_array(self) -> np.ndarray:
        return np.array(self.p)


RETRANSMIT = StrategyParams.pure(Action.RETRANSMIT)
LOOPBACK = StrategyParams.pure(Action.LOOPBACK)
DEFER = StrategyParams.pure(Action.DEFER)


def sample_post_service_action(params: StrategyParams, rng: np.random.Generator) -> Action:
    p1, p2, _ = params.p
    u = rng.random()
    if u < p1:
        return Action.RETRANSMIT
    if u < p1 + p2:
        return Action.LOOPBACK
    return Action.DEFER


class MulticastQueue:
    """Main multicast queue (ordered, head first) plus the unordered defer store.

    The entry being transmitted is detached from ``main`` for the duration of
    the service, so requests arriving meanwhile for the same file open a fresh
    entry instead of being granted by the in-flight transmission.
    """

    def __init__(self, catalog_size: int):
        self.catalog_size = catalog_size
        self.main: OrderedDict[int, QueueEntry] = OrderedDict()
        self.defer: dict[int, QueueEntry] = {}
        self.in_service: QueueEntry | None = None

    def __len__(self) -> int:
        return len(self.main)

    def head(self) -> QueueEntry | None:
        return next(iter(self.main.values()), None)

    def enqueue_request(self, file: int, user: int, now: float) -> None:
        if not 0 <= file < self.catalog_size:
            raise ValueError(f"file {file} outside catalog")
        entry = self.defer.pop(file, None)
        if entry is not None:
            entry.add(user, now)
            self.main[file] = entry
        elif file in self.main:
            self.main[file].add(user, now)
        else:
            entry = QueueEntry(file)
            entry.add(user, now)
            self.main[file] = entry

    def begin_service(self) -> QueueEntry:
        if self.in_service is not None:
            raise RuntimeError("a service is already in progress")
        if not self.main:
            raise RuntimeError("cannot serve an empty queue")
        _, entry = self.main.popitem(last=False)
        self.in_service = entry
        return entry

    def apply_service_outcome(
        self,
        served: QueueEntry,
        succeeded: Iterable[int],
        action: Action | None,
        now: float,
    ) -> list[tuple[int, float]]:
        """Deliver to ``succeeded`` users and dispose of the residue per ``action``.

        Returns ``(user, sojourn)`` pairs, one per delivered arrival.
        """
        if served is not self.in_service:
            raise RuntimeError("served entry is not the one at the head of the queue")
        self.in_service = None
        succeeded = set(succeeded)
        if not succeeded <= served.users:
            raise ValueError("succeeded users must be a subset of the served users")

        delivered = []
        residue = QueueEntry(served.file)
        for user, times in served.arrivals.items():
            if user in succeeded:
                delivered.extend((user, now - t) for t in times)
            else:
                residue.arrivals[user] = times
        if not residue.arrivals:
            return delivered
        if action is None:
            raise ValueError("a residue needs a post-service action")

        f = served.file
        pending = self.main.get(f)
        if action == Action.RETRANSMIT:
            if pending is not None:
                residue.absorb(self.main.pop(f))
            self.main[f] = residue
            self.main.move_to_end(f, last=False)
        elif action == Action.LOOPBACK or pending is not None:
            # a request that arrived mid-service already un-defers the file
            if pending is not None:
                pending.absorb(residue)
            else:
                self.main[f] = residue
        else:
            self.defer[f] = residue
        return delivered

    def pending_arrivals(self) -> int:
        entries = list(self.main.values()) + list(self.defer.values())
        if self.in_service is not None:
            entries.append(self.in_service)
        return sum(e.num_arrivals() for e in entries)

    def check_invariants(self) -> None:
        overlap = set(self.main) & set(self.defer)
        assert not overlap, f"files {overlap} in both main and defer"
        assert len(self.main) + len(self.defer) <= self.catalog_size
        for e in list(self.main.values()) + list(self.defer.values()):
            assert e.arrivals and all(e.arrivals.values())
