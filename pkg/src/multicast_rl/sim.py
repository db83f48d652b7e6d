"""Event loop of the multicast downlink: Poisson arrivals, back-to-back services, traces."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import GainSampler, MdpState, SystemConfig, zipf_pmf
from .queue import LOOPBACK, MulticastQueue, StrategyParams, sample_post_service_action
from .rl_common import substream

POWER_WINDOW = 200
REPORT_WINDOW = 1000

TRACE_COLUMNS = [
    "step", "sim_time_s", "power_w", "reward", "cp_avg_power_w",
    "beta", "p1", "p2", "p3", "mean_sojourn_s",
]


@dataclass
class Transition:
    state: MdpState
    action: int
    reward: int
    power: float
    cp: float
    next_state: MdpState


@dataclass
class PolicyHandle:
    """A decision rule mapping state to an index into ``levels`` (the config grid when ``None``)."""

    decide: Callable[[MdpState], int]
    strategy: StrategyParams = LOOPBACK
    levels: tuple[float, ...] | None = None


@dataclass
class SimTrace:
    sojourns: list[float] = field(default_factory=list)
    sojourn_users: list[int] = field(default_factory=list)
    delivery_steps: list[int] = field(default_factory=list)
    powers: list[float] = field(default_factory=list)
    cp: list[float] = field(default_factory=list)
    rewards: list[int] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)
    strategies: list[tuple[float, float, float]] = field(default_factory=list)
    arrivals: int = 0

    @property
    def transmissions(self) -> int:
        return len(self.powers)

    @property
    def sim_time(self) -> float:
        return self.times[-1] if self.times else 0.0

    def sojourns_for(self, users, start_step: int = 0) -> np.ndarray:
        users = set(users)
        return np.array([
            s for s, u, k in zip(self.sojourns, self.sojourn_users, self.delivery_steps)
            if u in users and k >= start_step
        ])


def mean_sojourn(samples, window: int | None = None) -> float | None:
    """Mean of the last ``window`` delivered samples; ``None`` when there are none."""
    if isinstance(samples, SimTrace):
        samples = samples.sojourns
    if len(samples) == 0:
        return None
    tail = samples[-window:] if window else samples
    return float(np.mean(tail))


def windowed_mean(values, window: int) -> np.ndarray:
    """Trailing mean over the last ``min(t, window)`` values at each position."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


class _ArrivalStream:
    """Block-buffered unit exponentials and request draws for the Poisson process."""

    BLOCK = 4096

    def __init__(self, rng: np.random.Generator, cdf: np.ndarray, num_users: int):
        self.rng = rng
        self.cdf = cdf
        self.num_users = num_users
        self._k = self.BLOCK

    def _refill(self) -> None:
        self._exp = self.rng.standard_exponential(self.BLOCK).tolist()
        files = np.searchsorted(self.cdf, self.rng.random(self.BLOCK) * self.cdf[-1], side="right")
        self._files = np.minimum(files, len(self.cdf) - 1).tolist()
        self._users = np.minimum((self.rng.random(self.BLOCK) * self.num_users).astype(int), self.num_users - 1).tolist()
        self._k = 0

    def next(self) -> tuple[float, int, int]:
        """Unit-rate exponential gap plus the file and user of that arrival."""
        if self._k >= self.BLOCK:
            self._refill()
        k = self._k
        self._k += 1
        return self._exp[k], self._files[k], self._users[k]


class World:
    """One simulation run: queue, clock, arrival process and fading draws.

    ``strategy`` and the arrival rate may be changed between steps; learners
    do so to move the queueing strategy or to follow a rate schedule.
    """

    def __init__(self, cfg: SystemConfig, strategy: StrategyParams = LOOPBACK, power_window: int = POWER_WINDOW,
                 rate_schedule: Sequence[tuple[float, float]] | None = None):
        self.cfg = cfg
        self.strategy = strategy
        self.queue = MulticastQueue(cfg.catalog_size)
        self.trace = SimTrace()
        self.clock = 0.0
        self._switches: deque = deque()
        if rate_schedule:
            t = 0.0
            for duration, rate in rate_schedule:
                if duration <= 0 or rate < 0:
                    raise ValueError("schedule segments need positive durations and non-negative rates")
                self._switches.append((t, float(rate)))
                t += duration
            self.rate = self._switches.popleft()[1]
        else:
            self.rate = cfg.arrival_rate
        self._cdf = np.cumsum(zipf_pmf(cfg.zipf_exponent, cfg.catalog_size))
        self._stream = _ArrivalStream(substream(cfg.seed, "arrivals"), self._cdf, cfg.num_users)
        self._channel_rng = substream(cfg.seed, "channels")
        self._strategy_rng = substream(cfg.seed, "strategy")
        self._gains = GainSampler(cfg.channels)
        self._levels = np.asarray(cfg.power_levels)
        self._snr_factor = cfg.noise_power * (2.0**cfg.spectral_efficiency - 1.0)
        self._next_request = (0, 0)
        self._next_arrival = self._draw_arrival(0.0)
        self._pending_gains: np.ndarray | None = None
        self._window = deque(maxlen=power_window)
        self._window_sum = 0.0

    def _draw_arrival(self, now: float) -> float:
        if self.rate <= 0:
            return math.inf
        gap, f, u = self._stream.next()
        self._next_request = (f, u)
        return now + gap / self.rate

    def set_arrival_rate(self, rate: float) -> None:
        """Switch the Poisson rate from the current instant on (memoryless restart)."""
        self.rate = rate
        self._next_arrival = self._draw_arrival(self.clock)

    def _advance(self, until: float) -> None:
        """Deliver arrivals up to ``until``, switching rate exactly at schedule boundaries."""
        while True:
            switch = self._switches[0][0] if self._switches else math.inf
            if self._next_arrival <= until and self._next_arrival <= switch:
                self._arrive()
            elif switch <= until:
                t, rate = self._switches.popleft()
                self.rate = rate
                self._next_arrival = self._draw_arrival(t)
            else:
                return

    def _arrive(self) -> None:
        f, u = self._next_request
        self.queue.enqueue_request(f, u, self._next_arrival)
        self.trace.arrivals += 1
        self._next_arrival = self._draw_arrival(self._next_arrival)

    def inject(self, file: int, user: int) -> None:
        """Place a request at the current time, outside the Poisson process."""
        self.queue.enqueue_request(file, user, self.clock)
        self.trace.arrivals += 1

    def _requested(self) -> np.ndarray:
        v = np.zeros(self.cfg.num_users, dtype=np.int8)
        head = self.queue.head()
        if head is not None:
            v[list(head.arrivals)] = 1
        return v

    def step(self, policy: PolicyHandle | Callable[[MdpState], int]):
        """One multicast transmission; returns ``(Transition, [(user, sojourn), ...])``.

        Returns ``None`` when the queue is empty and no arrival will ever come.
        """
        if isinstance(policy, PolicyHandle):
            decide, levels = policy.decide, policy.levels
        else:
            decide, levels = policy, None
        levels = self._levels if levels is None else levels
        while not self.queue.main:
            switch = self._switches[0][0] if self._switches else math.inf
            nxt = min(self._next_arrival, switch)
            if math.isinf(nxt):
                return None
            self._advance(nxt)
            self.clock = max(self.clock, nxt)

        gains = self._pending_gains if self._pending_gains is not None else self._gains(self._channel_rng)
        entry = self.queue.begin_service()
        requested = np.zeros(self.cfg.num_users, dtype=np.int8)
        requested[list(entry.arrivals)] = 1
        state = MdpState(gains, requested)
        action = int(decide(state))
        power = float(levels[action])
        ok = (requested > 0) & (power > self._snr_factor / gains**2)
        reward = int(np.count_nonzero(ok))

        end = self.clock + self.cfg.service_time
        self._advance(end)
        self.clock = end

        post = None
        if reward < len(entry.arrivals):
            post = sample_post_service_action(self.strategy, self._strategy_rng)
        delivered = self.queue.apply_service_outcome(entry, np.flatnonzero(ok).tolist(), post, end)

        if len(self._window) == self._window.maxlen:
            self._window_sum -= self._window[0]
        self._window.append(power)
        self._window_sum += power
        cp = self._window_sum / len(self._window)

        tr = self.trace
        step_idx = len(tr.powers)
        for user, soj in delivered:
            tr.sojourns.append(soj)
            tr.sojourn_users.append(user)
            tr.delivery_steps.append(step_idx)
        tr.powers.append(power)
        tr.cp.append(cp)
        tr.rewards.append(reward)
        tr.actions.append(action)
        tr.times.append(end)

        self._pending_gains = self._gains(self._channel_rng)
        next_state = MdpState(self._pending_gains, self._requested())
        return Transition(state, action, reward, power, cp, next_state), delivered

    @property
    def window_avg_power(self) -> float:
        return self._window_sum / len(self._window) if self._window else 0.0


def run(cfg: SystemConfig, policy: PolicyHandle, horizon: int | None = None) -> SimTrace:
    """Run ``horizon`` transmissions (``cfg.horizon`` by default) under a fixed policy."""
    world = World(cfg, policy.strategy)
    n = cfg.horizon if horizon is None else horizon
    for _ in range(n):
        if world.step(policy) is None:
            break
    return world.trace


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def trailing_sojourn_by_step(trace: SimTrace, window: int = REPORT_WINDOW) -> list[float | None]:
    """Mean of the last ``window`` delivered sojourns as of the end of each transmission."""
    csum = np.concatenate([[0.0], np.cumsum(trace.sojourns)])
    counts = np.searchsorted(np.asarray(trace.delivery_steps), np.arange(trace.transmissions), side="right")
    out = []
    for n in counts:
        if n == 0:
            out.append(None)
        else:
            lo = max(0, n - window)
            out.append((csum[n] - csum[lo]) / (n - lo))
    return out


def write_trace_csv(trace: SimTrace, path: str | Path) -> None:
    """One row per transmission; learning columns are blank when not recorded."""
    soj = trailing_sojourn_by_step(trace)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(trace.transmissions):
            beta = trace.betas[k] if k < len(trace.betas) else None
            p = trace.strategies[k] if k < len(trace.strategies) else (None, None, None)
            w.writerow([
                k, _fmt(trace.times[k]), _fmt(trace.powers[k]), trace.rewards[k], _fmt(trace.cp[k]),
                _fmt(beta), _fmt(p[0]), _fmt(p[1]), _fmt(p[2]), _fmt(soj[k]),
            ])


def write_sojourn_csv(trace: SimTrace, tags: list[str], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "user", "tag", "sojourn_s"])
        for s, u, k in zip(trace.sojourns, trace.sojourn_users, trace.delivery_steps):
            w.writerow([k, u, tags[u], _fmt(s)])
