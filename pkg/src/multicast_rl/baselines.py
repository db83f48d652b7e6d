"""Reference policies and exact oracles for small instances."""

from __future__ import annotations

import csv
import itertools
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import MdpState, SystemConfig, reward
from .queue import LOOPBACK, StrategyParams
from .rl_common import BETA_MAX, Schedule, substream
from .sim import POWER_WINDOW, PolicyHandle, Transition


@dataclass
class TinyMdpSpec:
    """Enumerable states with stationary probabilities ``q`` and a reward table ``rewards[k, a]``."""

    q: np.ndarray
    powers: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.powers = np.asarray(self.powers, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.rewards.shape != (len(self.q), len(self.powers)):
            raise ValueError("rewards must have shape (states, powers)")
        if np.any(self.q < 0) or abs(self.q.sum() - 1.0) > 1e-9:
            raise ValueError("q must be a probability vector")
        if np.any(np.diff(self.powers) <= 0):
            raise ValueError("powers must be strictly increasing")

    @property
    def num_states(self) -> int:
        return len(self.q)

    def avg_power(self, actions) -> float:
        return float(self.q @ self.powers[np.asarray(actions)])

    def objective(self, actions) -> float:
        return float(self.q @ self.rewards[np.arange(self.num_states), np.asarray(actions)])


@dataclass
class OracleResult:
    """Optimal per-state power map and the price that supports it.

    ``priced_actions`` is the per-state argmax at price ``beta``, the policy a
    price-following learner converges to; ``actions`` is the best deterministic
    map meeting the limit. They differ only when pricing leaves slack.
    """

    actions: np.ndarray
    beta: float
    avg_power: float
    objective: float
    priced_actions: np.ndarray

    def powers(self, spec: TinyMdpSpec) -> np.ndarray:
        return spec.powers[self.actions]


def lagrangian_policy(spec: TinyMdpSpec, beta: float) -> np.ndarray:
    """Per-state argmax of ``R - beta * P``; ``argmax`` keeps the first (lowest-power) tie."""
    return np.argmax(spec.rewards - beta * spec.powers[None, :], axis=1)


def price_interval(spec: TinyMdpSpec, actions) -> tuple[float, float]:
    """Range of prices at which every state's choice in ``actions`` is a priced argmax."""
    lo, hi = 0.0, np.inf
    for k, a in enumerate(actions):
        for b in range(len(spec.powers)):
            dr = spec.rewards[k, b] - spec.rewards[k, a]
            dp = spec.powers[b] - spec.powers[a]
            if dp > 0:
                lo = max(lo, dr / dp)
            elif dp < 0:
                hi = min(hi, dr / dp)
    return lo, hi


def smallest_feasible_price(spec: TinyMdpSpec, avg_power_limit: float, beta_max: float = BETA_MAX,
                            tol: float = 1e-4) -> float:
    """Bisection for the smallest price whose per-state argmax meets the limit."""
    def meets(actions) -> bool:
        return spec.avg_power(actions) <= avg_power_limit + 1e-12

    if not meets(np.zeros(spec.num_states, dtype=int)):
        raise ValueError("average power limit is below the minimum achievable power")
    if meets(lagrangian_policy(spec, 0.0)):
        return 0.0
    if not meets(lagrangian_policy(spec, beta_max)):
        raise ValueError(f"no price in [0, {beta_max}] meets the average power limit")
    lo, hi = 0.0, beta_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if meets(lagrangian_policy(spec, mid)):
            hi = mid
        else:
            lo = mid
    return hi


def _branch_and_bound(spec: TinyMdpSpec, limit: float, beta: float, start: np.ndarray) -> np.ndarray:
    """Best deterministic map under the limit; prunes with the priced (dual) bound at ``beta``."""
    qr = spec.q[:, None] * spec.rewards
    qp = spec.q[:, None] * spec.powers[None, :]
    K = spec.num_states
    priced = (qr - beta * qp).max(axis=1)
    bound_tail = np.concatenate([np.cumsum(priced[::-1])[::-1], [0.0]])
    min_tail = np.concatenate([np.cumsum(qp.min(axis=1)[::-1])[::-1], [0.0]])
    order = [np.argsort(-qr[k], kind="stable") for k in range(K)]
    best = [float(qr[np.arange(K), start].sum()), start.copy()]
    acts = np.zeros(K, dtype=int)

    def visit(k: int, value: float, used: float) -> None:
        if k == K:
            if value > best[0] + 1e-12:
                best[0], best[1] = value, acts.copy()
            return
        # weak duality: any completion is worth at most the priced optimum plus beta times the budget left
        if value + bound_tail[k] + beta * (limit - used) <= best[0] + 1e-12:
            return
        for a in order[k]:
            if used + qp[k, a] + min_tail[k + 1] <= limit + 1e-12:
                acts[k] = a
                visit(k + 1, value + qr[k, a], used + qp[k, a])

    visit(0, 0.0, 0.0)
    return best[1]


def lagrangian_oracle(spec: TinyMdpSpec, avg_power_limit: float, beta_max: float = BETA_MAX,
                      tol: float = 1e-4) -> OracleResult:
    """Optimal per-state powers under the average limit.

    The price is found by bisection; the priced map is then completed to the
    exact optimum by branch and bound when it leaves part of the budget unused.
    """
    beta = smallest_feasible_price(spec, avg_power_limit, beta_max, tol)
    priced = lagrangian_policy(spec, beta)
    actions = _branch_and_bound(spec, avg_power_limit, beta, priced)
    return OracleResult(actions, beta, spec.avg_power(actions), spec.objective(actions), priced)


def exhaustive_best(spec: TinyMdpSpec, avg_power_limit: float) -> tuple[float, tuple[int, ...] | None]:
    """Best objective over every deterministic per-state power map meeting the limit."""
    best, arg = -np.inf, None
    for actions in itertools.product(range(len(spec.powers)), repeat=spec.num_states):
        if spec.avg_power(actions) <= avg_power_limit + 1e-12:
            value = spec.objective(actions)
            if value > best + 1e-12:
                best, arg = value, actions
    return best, arg


def write_oracle_csv(spec: TinyMdpSpec, result: OracleResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "power_w", "q", "reward"])
        for k, a in enumerate(result.actions):
            w.writerow([k, f"{spec.powers[a]:.9g}", f"{spec.q[k]:.9g}", f"{spec.rewards[k, a]:.9g}"])


def constant_power_policy(power: float, strategy: StrategyParams = LOOPBACK) -> PolicyHandle:
    """Transmit at exactly ``power`` whatever the state."""
    return PolicyHandle(lambda state: 0, strategy, levels=(float(power),))


class TinyEnv:
    """Multicast power control with i.i.d. states, so the stationary law is policy independent.

    Each step draws every user's gain uniformly from its ``gain_supports`` entry and a
    non-empty requesting set uniformly at random.
    """

    def __init__(self, cfg: SystemConfig, gain_supports: Sequence[Sequence[float]], seed: int = 0,
                 power_window: int = POWER_WINDOW):
        if len(gain_supports) != cfg.num_users:
            raise ValueError("one gain support per user")
        self.cfg = cfg
        self.supports = [tuple(float(g) for g in s) for s in gain_supports]
        self.requests = [v for v in itertools.product((0, 1), repeat=cfg.num_users) if any(v)]
        self.states = [
            (gains, v) for gains in itertools.product(*self.supports) for v in self.requests
        ]
        self._index = {s: k for k, s in enumerate(self.states)}
        self.rng = substream(seed, "tiny-env")
        self._window = deque(maxlen=power_window)
        self._pending = self._draw()
        self.powers: list[float] = []

    @classmethod
    def from_config(cls, cfg: SystemConfig, seed: int | None = None) -> "TinyEnv":
        """Gain supports taken from the config's discrete uniform channels."""
        supports = []
        for c in cfg.channels:
            if c.kind != "uniform":
                raise ValueError("the i.i.d. environment needs discrete uniform channels")
            supports.append(c.support if c.quantity == "amplitude" else tuple(np.sqrt(c.support)))
        return cls(cfg, supports, cfg.seed if seed is None else seed)

    def _draw(self) -> MdpState:
        gains = [s[self.rng.integers(len(s))] for s in self.supports]
        v = self.requests[self.rng.integers(len(self.requests))]
        return MdpState(np.array(gains), np.array(v))

    def state_index(self, state: MdpState) -> int:
        return self._index[(tuple(float(g) for g in state.gains), tuple(int(x) for x in state.requested))]

    def mdp_state(self, k: int) -> MdpState:
        gains, v = self.states[k]
        return MdpState(np.array(gains), np.array(v))

    def spec(self) -> TinyMdpSpec:
        levels = self.cfg.power_levels
        q = np.full(len(self.states), 1.0 / len(self.states))
        r = np.array([[reward(self.mdp_state(k), p, self.cfg) for p in levels] for k in range(len(self.states))])
        return TinyMdpSpec(q, np.array(levels), r)

    def step(self, policy):
        decide = policy.decide if isinstance(policy, PolicyHandle) else policy
        state = self._pending
        a = int(decide(state))
        power = float(self.cfg.power_levels[a])
        r = reward(state, power, self.cfg)
        self._window.append(power)
        self.powers.append(power)
        self._pending = self._draw()
        cp = sum(self._window) / len(self._window)
        return Transition(state, a, r, power, cp, self._pending), []


def tabular_q(
    spec: TinyMdpSpec,
    steps: int,
    beta: float | None = None,
    avg_power_limit: float | None = None,
    beta_rate: Schedule = Schedule("constant", 1e-3),
    beta0: float = 0.05,
    gamma: float = 0.9,
    eps: float = 0.1,
    seed: int = 0,
    power_window: int = POWER_WINDOW,
    lr_exponent: float = 1.0,
) -> tuple[np.ndarray, float]:
    """Q-learning on i.i.d. states drawn from ``spec.q`` with reward ``R - beta * P``.

    With ``beta`` given the price is fixed; otherwise it follows the same
    projected ascent as the deep learner against ``avg_power_limit``.
    Learning rate is ``visits(s, a) ** -lr_exponent``. The harmonic default
    fixes the greedy policy quickly on i.i.d. states but moves values only as
    ``n ** -(1 - gamma)``; an exponent in (0.5, 1) converges values polynomially.
    Returns the Q table and the final price.
    """
    if not 0.5 < lr_exponent <= 1.0:
        raise ValueError("lr_exponent must lie in (0.5, 1]")
    if beta is None and avg_power_limit is None:
        raise ValueError("give a fixed beta or an average power limit")
    rng = substream(seed, "tabular-q")
    K, A = spec.rewards.shape
    Q = np.zeros((K, A))
    visits = np.zeros((K, A))
    b = beta0 if beta is None else beta
    window = deque(maxlen=power_window)
    states = rng.choice(K, size=steps + 1, p=spec.q)
    for t in range(steps):
        s, s_next = states[t], states[t + 1]
        if rng.random() < eps:
            a = int(rng.integers(A))
        else:
            a = int(np.argmax(Q[s]))
        p = spec.powers[a]
        r = spec.rewards[s, a] - b * p
        visits[s, a] += 1
        Q[s, a] += (r + gamma * Q[s_next].max() - Q[s, a]) * visits[s, a] ** -lr_exponent
        if beta is None:
            window.append(p)
            b = min(max(b + beta_rate(t) * (sum(window) / len(window) - avg_power_limit), 0.0), BETA_MAX)
    return Q, b
