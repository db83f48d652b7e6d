"""Domain types and physical-layer formulas for the fading multicast downlink."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ChannelModel:
    """Per-user fading distribution.

    ``kind`` is ``"uniform"`` (discrete uniform over ``support``) or
    ``"exponential"`` (mean ``mean``). ``quantity`` says what the distribution
    describes: ``"amplitude"`` means draws are the gain ``H`` used directly in
    the power requirement; ``"power"`` means draws are ``|H|^2`` (Rayleigh
    fading has an exponential power gain) and the amplitude is its square root.
    ``tag`` is the user class, ``"good"`` or ``"bad"``.
    """

    kind: str
    mean: float = 1.0
    support: tuple[float, ...] = ()
    tag: str = "good"
    quantity: str = "amplitude"

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.support or min(self.support) <= 0:
                raise ValueError("uniform channel support must be non-empty and positive")
        elif self.kind == "exponential":
            if self.mean <= 0:
                raise ValueError("exponential channel mean must be positive")
        else:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.quantity not in ("amplitude", "power"):
            raise ValueError(f"unknown channel quantity {self.quantity!r}")
        if self.tag not in ("good", "bad"):
            raise ValueError(f"unknown channel tag {self.tag!r}")

    def amplitude_quantile(self, q: float) -> float:
        """Quantile of the drawn amplitude, used to scale network inputs."""
        if self.kind == "uniform":
            x = float(np.quantile(np.asarray(self.support, dtype=float), q))
        else:
            x = -self.mean * math.log1p(-q)
        return math.sqrt(x) if self.quantity == "power" else x


def uniform_channel(support: Sequence[float], tag: str = "good", quantity: str = "amplitude") -> ChannelModel:
    return ChannelModel("uniform", support=tuple(float(s) for s in support), tag=tag, quantity=quantity)


def exponential_channel(mean: float, tag: str = "good", quantity: str = "amplitude") -> ChannelModel:
    return ChannelModel("exponential", mean=float(mean), tag=tag, quantity=quantity)


@dataclass(frozen=True)
class SystemConfig:
    num_users: int
    catalog_size: int
    channels: tuple[ChannelModel, ...]
    power_levels: tuple[float, ...]
    avg_power_limit: float = 7.0
    file_size: float = 80e6
    tx_rate: float = 80e6
    spectral_efficiency: float = 1.0
    noise_power: float = 1.0
    zipf_exponent: float = 0.0
    arrival_rate: float = 1.0
    horizon: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.catalog_size < 1:
            raise ValueError("num_users and catalog_size must be >= 1")
        if len(self.channels) != self.num_users:
            raise ValueError(f"expected {self.num_users} channel models, got {len(self.channels)}")
        levels = self.power_levels
        if not levels or levels[0] <= 0 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("power_levels must be positive and strictly increasing")
        if self.file_size <= 0 or self.tx_rate <= 0:
            raise ValueError("file_size and tx_rate must be positive")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be >= 0")
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be >= 0")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")

    @property
    def service_time(self) -> float:
        return self.file_size / self.tx_rate

    @property
    def num_actions(self) -> int:
        return len(self.power_levels)

    def tags(self) -> list[str]:
        return [c.tag for c in self.channels]


@dataclass
class MdpState:
    """Per-user gains ``H`` and the request indicator ``V`` of the HoL file."""

    gains: np.ndarray
    requested: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if self.requested is None:
            self.requested = np.zeros(len(self.gains), dtype=np.int8)
        self.requested = np.asarray(self.requested, dtype=np.int8)
        if self.gains.shape != self.requested.shape:
            raise ValueError("gains and requested must have the same length")

    def flatten(self, gain_scale: np.ndarray | float = 1.0) -> np.ndarray:
        return np.concatenate([self.gains / gain_scale, self.requested.astype(float)])


def required_power(gain, cfg: SystemConfig):
    """Transmit power needed to reach a user with amplitude ``gain`` (Shannon threshold)."""
    g = np.asarray(gain, dtype=float)
    if np.any(g <= 0):
        raise ValueError("channel gain must be positive")
    out = cfg.noise_power * (2.0 ** cfg.spectral_efficiency - 1.0) / g**2
    return float(out) if out.ndim == 0 else out


def successes(state: MdpState, power: float, cfg: SystemConfig) -> np.ndarray:
    """Boolean mask of requesting users reached at ``power``; ties fail."""
    return (state.requested > 0) & (power > required_power(state.gains, cfg))


def reward(state: MdpState, power: float, cfg: SystemConfig) -> int:
    return int(np.count_nonzero(successes(state, power, cfg)))


def draw_gains(models: Sequence[ChannelModel], rng: np.random.Generator) -> np.ndarray:
    out = np.empty(len(models))
    for j, m in enumerate(models):
        if m.kind == "uniform":
            x = m.support[rng.integers(len(m.support))]
        else:
            x = rng.exponential(m.mean)
        out[j] = math.sqrt(x) if m.quantity == "power" else x
    return out


class GainSampler:
    """Vectorised ``draw_gains`` for a fixed set of models.

    Consumes the generator differently from :func:`draw_gains` (one block call
    per kind instead of one call per user) but is equally deterministic.
    """

    def __init__(self, models: Sequence[ChannelModel]):
        self.models = tuple(models)
        self._exp_idx = np.array([j for j, m in enumerate(models) if m.kind == "exponential"], dtype=int)
        self._exp_mean = np.array([models[j].mean for j in self._exp_idx])
        self._uni_idx = np.array([j for j, m in enumerate(models) if m.kind == "uniform"], dtype=int)
        self._uni_support = [np.asarray(models[j].support) for j in self._uni_idx]
        self._sqrt = np.array([m.quantity == "power" for m in models])

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(len(self.models))
        if len(self._exp_idx):
            out[self._exp_idx] = rng.exponential(self._exp_mean)
        if len(self._uni_idx):
            picks = rng.random(len(self._uni_idx))
            for k, (j, sup) in enumerate(zip(self._uni_idx, self._uni_support)):
                out[j] = sup[int(picks[k] * len(sup))]
        out[self._sqrt] = np.sqrt(out[self._sqrt])
        return out


def zipf_pmf(alpha: float, num_files: int) -> np.ndarray:
    w = np.arange(1, num_files + 1, dtype=float) ** -alpha
    return w / w.sum()


def sample_request(zipf_exponent: float, num_files: int, num_users: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(file, user)`` for one arrival; file ``0`` is the most popular."""
    cdf = np.cumsum(zipf_pmf(zipf_exponent, num_files))
    return _request_from_cdf(cdf, num_users, rng)


def _request_from_cdf(cdf: np.ndarray, num_users: int, rng: np.random.Generator) -> tuple[int, int]:
    u = rng.random(2)
    f = int(np.searchsorted(cdf, u[0] * cdf[-1], side="right"))
    return min(f, len(cdf) - 1), min(int(u[1] * num_users), num_users - 1)
