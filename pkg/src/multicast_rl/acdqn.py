"""Constrained deep Q-learning: power control with a learned price on transmit power."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import MdpState, SystemConfig
from .nn import AdamConfig, Mlp, adam_step, copy_weights, forward, mse_and_grad
from .queue import LOOPBACK, StrategyParams
from .rl_common import BETA_MAX, Schedule, epsilon, substream, uniform_indices
from .sim import POWER_WINDOW, PolicyHandle, SimTrace, World


@dataclass(frozen=True)
class AcdqnParams:
    hidden: tuple[int, ...] = (128, 64)
    gamma: float = 0.9
    memory: int = 30_000
    batch: int = 64
    target_sync: int = 100
    power_window: int = POWER_WINDOW
    eta_q: Schedule = Schedule("inverse", 0.001, 1e-5)
    eta_beta: Schedule = Schedule("inverse_loglog", 1e-4, 1e-5)
    eps0: float = 1.0
    eps_decay: float = 0.98
    eps_floor: float = 0.01
    eps_period: int = 1
    beta0: float = 0.05

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if min(self.memory, self.batch, self.target_sync, self.power_window, self.eps_period) < 1:
            raise ValueError("memory, batch, target_sync, power_window and eps_period must be >= 1")
        if not 0 <= self.beta0 <= BETA_MAX:
            raise ValueError(f"beta0 must lie in [0, {BETA_MAX}]")

    @classmethod
    def decaying(cls, **kw) -> "AcdqnParams":
        return cls(**kw)

    @classmethod
    def constant_step(cls, eta_q: float = 0.001, eta_beta: float = 3e-5, **kw) -> "AcdqnParams":
        """Fixed step sizes, so the price keeps adapting when traffic changes."""
        return cls(eta_q=Schedule.constant(eta_q), eta_beta=Schedule.constant(eta_beta), **kw)


def lagrangian_reward(raw_reward, power, beta: float):
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return raw_reward - beta * power


def lagrange_update(beta: float, cp: float, limit: float, rate: float) -> float:
    """Projected ascent on the price: spending above ``limit`` makes power dearer."""
    if rate < 0:
        raise ValueError("rate must be non-negative")
    return min(max(beta + rate * (cp - limit), 0.0), BETA_MAX)


def dqn_targets(rewards, next_x, target: Mlp, gamma: float) -> np.ndarray:
    """Bootstrapped targets ``r + gamma * max_a Q*(s', a)``; the task never terminates."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty batch")
    return rewards + gamma * forward(target, next_x).max(axis=1)


def select_action(net: Mlp, x: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the network outputs; ``argmax`` breaks ties toward index 0."""
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(net.sizes[-1]))
    return int(np.argmax(forward(net, x)))


def gain_scale(cfg: SystemConfig, q: float = 0.99) -> np.ndarray:
    """Per-user input scale: the ``q`` quantile of each user's gain amplitude."""
    return np.array([c.amplitude_quantile(q) for c in cfg.channels])


class TransitionMemory:
    """Ring buffer of encoded transitions held column-wise in preallocated arrays."""

    def __init__(self, capacity: int, width: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.pushes = 0
        self.x = np.zeros((capacity, width))
        self.next_x = np.zeros((capacity, width))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.power = np.zeros(capacity)

    def __len__(self) -> int:
        return min(self.pushes, self.capacity)

    def push(self, x, action: int, reward: float, power: float, next_x) -> None:
        k = self.pushes % self.capacity
        self.x[k] = x
        self.next_x[k] = next_x
        self.action[k] = action
        self.reward[k] = reward
        self.power[k] = power
        self.pushes += 1

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return uniform_indices(len(self), n, rng)


class AcdqnAgent:
    """Online and target Q networks, replay memory and the power price ``beta``.

    Replay items keep the raw reward and power; the penalized reward is formed
    with the price current at training time.
    """

    def __init__(self, cfg: SystemConfig, params: AcdqnParams = AcdqnParams(), seed: int | None = None,
                 scale: np.ndarray | None = None):
        self.cfg = cfg
        self.params = params
        seed = cfg.seed if seed is None else seed
        sizes = (2 * cfg.num_users, *params.hidden, cfg.num_actions)
        self.online = Mlp(sizes, substream(seed, "init"))
        self.target = Mlp(sizes)
        copy_weights(self.online, self.target)
        self.memory = TransitionMemory(params.memory, 2 * cfg.num_users)
        self.scale = gain_scale(cfg) if scale is None else np.asarray(scale, dtype=float)
        self.beta = params.beta0
        self.t = 0
        self.losses: list[float] = []
        self._explore_rng = substream(seed, "exploration")
        self._replay_rng = substream(seed, "replay")
        self._adam = AdamConfig()

    def encode(self, state: MdpState) -> np.ndarray:
        return state.flatten(self.scale)

    @property
    def epsilon(self) -> float:
        p = self.params
        return epsilon(self.t // p.eps_period, p.eps0, p.eps_decay, p.eps_floor)

    def act(self, state: MdpState) -> int:
        return select_action(self.online, self.encode(state), self.epsilon, self._explore_rng)

    def greedy(self, state: MdpState) -> int:
        return int(np.argmax(forward(self.online, self.encode(state))))

    def policy(self, strategy: StrategyParams = LOOPBACK) -> PolicyHandle:
        """Frozen greedy policy (reads the online network at call time)."""
        return PolicyHandle(self.greedy, strategy)

    def observe(self, tr) -> None:
        """Store one transition, then one network step, one price step and maybe a target sync."""
        p = self.params
        self.memory.push(self.encode(tr.state), tr.action, tr.reward, tr.power, self.encode(tr.next_state))
        if len(self.memory) >= p.batch:
            self._train()
            self.beta = lagrange_update(self.beta, tr.cp, self.cfg.avg_power_limit, p.eta_beta(self.t))
        self.t += 1
        if self.t % p.target_sync == 0:
            copy_weights(self.online, self.target)

    def _train(self) -> None:
        p = self.params
        mem = self.memory
        idx = mem.sample_indices(p.batch, self._replay_rng)
        r = lagrangian_reward(mem.reward[idx], mem.power[idx], self.beta)
        y = dqn_targets(r, mem.next_x[idx], self.target, p.gamma)
        loss, grads = mse_and_grad(self.online, mem.x[idx], y, mem.action[idx])
        adam_step(self.online, grads, p.eta_q(self.t), self._adam)
        self.losses.append(loss)


@dataclass
class AcdqnResult:
    agent: AcdqnAgent
    trace: SimTrace
    world: World = field(repr=False)

    @property
    def policy(self) -> PolicyHandle:
        return self.agent.policy(self.world.strategy)


def acdqn_step(agent: AcdqnAgent, world: World):
    """One transmission of the learning loop; ``None`` once the system has gone idle for good."""
    out = world.step(agent.act)
    if out is None:
        return None
    tr, delivered = out
    agent.observe(tr)
    trace = world.trace
    trace.betas.append(agent.beta)
    trace.strategies.append(world.strategy.p)
    return tr, delivered


def acdqn_train(
    cfg: SystemConfig,
    mode: str = "decaying",
    horizon: int | None = None,
    strategy: StrategyParams = LOOPBACK,
    params: AcdqnParams | None = None,
    world: World | None = None,
    until_time: float | None = None,
) -> AcdqnResult:
    """Learn power control online for ``horizon`` transmissions (or until sim time ``until_time``)."""
    if params is None:
        if mode == "decaying":
            params = AcdqnParams.decaying()
        elif mode == "constant":
            params = AcdqnParams.constant_step()
        else:
            raise ValueError(f"unknown mode {mode!r}")
    world = World(cfg, strategy, params.power_window) if world is None else world
    agent = AcdqnAgent(cfg, params)
    n = cfg.horizon if horizon is None and until_time is None else horizon
    k = 0
    while (n is None or k < n) and (until_time is None or world.clock < until_time):
        if acdqn_step(agent, world) is None:
            break
        k += 1
    return AcdqnResult(agent, world.trace, world)
