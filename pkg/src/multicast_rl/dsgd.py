"""Surrogate-assisted stochastic gradient descent over the queueing-strategy simplex.

A small network learns mean sojourn time as a function of the strategy
probabilities from noisy windowed observations; its finite-difference
gradient drives projected descent steps on the strategy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import SystemConfig
from .nn import AdamConfig, Mlp, adam_step, forward, mse_and_grad
from .queue import StrategyParams
from .rl_common import ReplayMemory, Schedule, epsilon, project_simplex, substream
from .sim import PolicyHandle, SimTrace, World, _fmt

DSGD_COLUMNS = ["iteration", "p1", "p2", "p3", "f_hat", "surrogate_loss"]


@dataclass(frozen=True)
class DsgdParams:
    hidden: tuple[int, ...] = (32, 16)
    memory: int = 1000
    batch: int = 50
    train_after: int = 100
    window: int = 100
    eta_theta: Schedule = Schedule("inverse", 0.01, 1e-5)
    eta_p: Schedule = Schedule("inverse_loglog", 0.001, 1e-5)
    fd_step: float = 0.01
    eps0: float = 1.0
    eps_decay: float = 0.98
    eps_floor: float = 0.0

    def __post_init__(self):
        if min(self.memory, self.batch, self.window) < 1 or self.train_after < 0:
            raise ValueError("memory, batch and window must be >= 1, train_after >= 0")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")


def observe_fhat(samples, previous: float | None = None) -> float | None:
    """Mean of the sojourn samples of one window; the previous estimate when the window is empty."""
    if len(samples) == 0:
        return previous
    return float(np.mean(samples))


def surrogate_gradient(net: Mlp, p, h: float = 0.01) -> np.ndarray:
    """Central differences of the surrogate along each coordinate, probes left unprojected."""
    if h <= 0:
        raise ValueError("h must be positive")
    p = np.asarray(p, dtype=float)
    probes = np.concatenate([p + h * np.eye(3), p - h * np.eye(3)])
    out = forward(net, probes)[:, 0]
    return (out[:3] - out[3:]) / (2 * h)


@dataclass
class DsgdRecord:
    iteration: int
    p: tuple[float, float, float]
    f_hat: float | None
    loss: float | None


class DsgdState:
    """Strategy iterate, surrogate network and its replay of (strategy, f_hat) pairs.

    Targets are standardized with the mean and spread of the memory at the
    first training step and kept fixed afterwards, so the surrogate sees O(1)
    outputs while its gradient is reported in seconds.
    """

    def __init__(self, params: DsgdParams = DsgdParams(), seed: int = 0, p0=None):
        self.params = params
        self.net = Mlp((3, *params.hidden, 1), substream(seed, "dsgd-init"))
        self.memory: ReplayMemory = ReplayMemory(params.memory)
        self.rng = substream(seed, "dsgd")
        self.t = 0
        self.p = project_simplex(self.rng.random(3)) if p0 is None else project_simplex(p0)
        self.buffer: list[float] = []
        self.f_hat: float | None = None
        self.shift: float | None = None
        self.spread = 1.0
        self.history: list[DsgdRecord] = []
        self._adam = AdamConfig()

    @property
    def strategy(self) -> StrategyParams:
        return StrategyParams(tuple(self.p))

    def record(self, sojourns) -> None:
        self.buffer.extend(sojourns)

    def surrogate(self, p) -> np.ndarray:
        """Surrogate prediction in seconds."""
        y = forward(self.net, np.atleast_2d(p))[:, 0]
        return y * self.spread + (self.shift or 0.0)

    def tick(self) -> np.ndarray:
        """Close the current window with its mean sojourn and move the strategy."""
        f = observe_fhat(self.buffer, self.f_hat)
        self.buffer = []
        return self.observe(f)

    def observe(self, f_hat: float | None) -> np.ndarray:
        """Store ``(p, f_hat)`` for the strategy that produced it, then pick the next strategy."""
        prm = self.params
        self.f_hat = f_hat
        if f_hat is not None:
            self.memory.push((self.p.copy(), f_hat))
        loss = None
        used = self.p
        self.t += 1
        if self.t < prm.train_after or len(self.memory) == 0:
            self.p = project_simplex(self.rng.random(3))
        else:
            loss = self._train()
            grad = surrogate_gradient(self.net, self.p, prm.fd_step) * self.spread
            # the surrogate only sees points on the simplex, so its slope along (1, 1, 1)
            # is extrapolation; dropping it keeps renormalization from undoing the step
            grad -= grad.mean()
            eps = epsilon(self.t, prm.eps0, prm.eps_decay, prm.eps_floor)
            noise = self.rng.uniform(0.0, eps, size=3)
            self.p = project_simplex(self.p - prm.eta_p(self.t) * grad + noise)
        self.history.append(DsgdRecord(self.t - 1, tuple(used), f_hat, loss))
        return self.p

    def _train(self) -> float:
        prm = self.params
        if self.shift is None:
            ys = np.array([y for _, y in self.memory.items])
            self.shift = float(ys.mean())
            self.spread = float(ys.std()) if ys.std() > 1e-9 * max(1.0, abs(self.shift)) else 1.0
        batch = self.memory.sample_minibatch(prm.batch, self.rng)
        x = np.array([b[0] for b in batch])
        y = (np.array([b[1] for b in batch]) - self.shift) / self.spread
        loss, grads = mse_and_grad(self.net, x, y[:, None])
        adam_step(self.net, grads, prm.eta_theta(self.t), self._adam)
        return loss


def dsgd_iterate(state: DsgdState, world: World, policy: PolicyHandle) -> np.ndarray:
    """Serve one window under the current strategy, then take one DSGD step."""
    world.strategy = state.strategy
    for _ in range(state.params.window):
        out = world.step(policy)
        if out is None:
            break
        _, delivered = out
        state.record([s for _, s in delivered])
        world.trace.strategies.append(world.strategy.p)
    p = state.tick()
    world.strategy = StrategyParams(tuple(p))
    return p


@dataclass
class DsgdResult:
    state: DsgdState
    trace: SimTrace
    world: World = field(repr=False)

    @property
    def strategy(self) -> StrategyParams:
        return self.state.strategy


def dsgd_run(cfg: SystemConfig, policy: PolicyHandle, horizon: int | None = None,
             params: DsgdParams = DsgdParams(), until_time: float | None = None,
             world: World | None = None) -> DsgdResult:
    """Optimize the queueing strategy online while ``policy`` sets the transmit power."""
    world = World(cfg) if world is None else world
    state = DsgdState(params, cfg.seed)
    n = cfg.horizon if horizon is None and until_time is None else horizon
    while (n is None or world.trace.transmissions < n) and (until_time is None or world.clock < until_time):
        before = world.trace.transmissions
        dsgd_iterate(state, world, policy)
        if world.trace.transmissions == before:
            break
    return DsgdResult(state, world.trace, world)


def write_dsgd_csv(state: DsgdState, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DSGD_COLUMNS)
        for r in state.history:
            w.writerow([r.iteration, _fmt(r.p[0]), _fmt(r.p[1]), _fmt(r.p[2]), _fmt(r.f_hat), _fmt(r.loss)])
