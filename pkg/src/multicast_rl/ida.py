"""Joint learning of power control and queueing strategy on three timescales.

Every transmission runs one constrained Q-learning step (network, then power
price); every ``period`` transmissions the strategy optimizer closes a window
and moves the retransmit/loopback/defer probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .acdqn import AcdqnAgent, AcdqnParams, acdqn_step
from .dsgd import DsgdParams, DsgdState
from .model import SystemConfig
from .queue import StrategyParams
from .rl_common import Schedule
from .sim import PolicyHandle, SimTrace, World


@dataclass(frozen=True)
class IdaParams:
    acdqn: AcdqnParams = AcdqnParams.constant_step(eta_q=0.001, eta_beta=1e-4)
    dsgd: DsgdParams = DsgdParams(eta_theta=Schedule.constant(0.01), eta_p=Schedule.constant(0.001))

    def __post_init__(self):
        eta1, eta2 = self.acdqn.eta_q(0), self.acdqn.eta_beta(0)
        period = self.period
        eta3, eta4 = self.dsgd.eta_theta(0) / period, self.dsgd.eta_p(0) / period
        # the price may run as slowly as the surrogate, but never slower
        if not (eta1 > eta2 >= eta3 > eta4):
            raise ValueError(
                f"step sizes must be ordered q > price >= surrogate/period > strategy/period, "
                f"got {eta1:g}, {eta2:g}, {eta3:g}, {eta4:g}"
            )

    @property
    def period(self) -> int:
        """Transmissions per strategy step (the observation window)."""
        return self.dsgd.window


@dataclass
class IdaResult:
    agent: AcdqnAgent
    dsgd: DsgdState
    trace: SimTrace
    world: World = field(repr=False)

    @property
    def strategy(self) -> StrategyParams:
        return self.dsgd.strategy

    @property
    def policy(self) -> PolicyHandle:
        return self.agent.policy(self.strategy)


def ida_step(agent: AcdqnAgent, dsgd: DsgdState, world: World, period: int):
    out = acdqn_step(agent, world)
    if out is None:
        return None
    dsgd.record([s for _, s in out[1]])
    if world.trace.transmissions % period == 0:
        world.strategy = StrategyParams(tuple(dsgd.tick()))
    return out


def ida_train(cfg: SystemConfig, horizon: int | None = None, params: IdaParams = IdaParams(),
              until_time: float | None = None, world: World | None = None) -> IdaResult:
    dsgd = DsgdState(params.dsgd, cfg.seed)
    if world is None:
        world = World(cfg, dsgd.strategy, params.acdqn.power_window)
    else:
        world.strategy = dsgd.strategy
    agent = AcdqnAgent(cfg, params.acdqn)
    n = cfg.horizon if horizon is None and until_time is None else horizon
    k = 0
    while (n is None or k < n) and (until_time is None or world.clock < until_time):
        if ida_step(agent, dsgd, world, params.period) is None:
            break
        k += 1
    return IdaResult(agent, dsgd, world.trace, world)
