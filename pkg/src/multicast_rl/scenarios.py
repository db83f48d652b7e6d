"""Built-in system configurations: small, moderate and large user cases."""

from __future__ import annotations

import numpy as np

from .model import SystemConfig, exponential_channel, uniform_channel

# 20 levels from 1 W to 50 W
POWER_LEVELS = tuple(float(x) for x in np.linspace(1.0, 50.0, 20))

# 10 MB files at 10 MB/s: one second per transmission
FILE_BITS = 80e6
RATE_BPS = 80e6


def _split(num_users: int, bad, good):
    nbad = num_users // 2
    return tuple([bad] * nbad + [good] * (num_users - nbad))


def small(arrival_rate: float = 1.0, seed: int = 0, **kw) -> SystemConfig:
    """Four users, uniform popularity, discrete uniform power gains."""
    bad = uniform_channel([0.1, 0.2, 0.3], tag="bad", quantity="power")
    good = uniform_channel([0.7, 0.8, 0.9], tag="good", quantity="power")
    args = dict(
        num_users=4, catalog_size=100, channels=_split(4, bad, good), power_levels=POWER_LEVELS,
        avg_power_limit=7.0, file_size=FILE_BITS, tx_rate=RATE_BPS, zipf_exponent=0.0,
        arrival_rate=arrival_rate, horizon=100_000, seed=seed,
    )
    args.update(kw)
    return SystemConfig(**args)


def moderate(arrival_rate: float = 1.0, seed: int = 0, num_users: int = 10, **kw) -> SystemConfig:
    """Rayleigh fading: exponential power gains with mean 0.1 (bad) and 1.0 (good), Zipf(1)."""
    bad = exponential_channel(0.1, tag="bad", quantity="power")
    good = exponential_channel(1.0, tag="good", quantity="power")
    args = dict(
        num_users=num_users, catalog_size=100, channels=_split(num_users, bad, good),
        power_levels=POWER_LEVELS, avg_power_limit=7.0, file_size=FILE_BITS, tx_rate=RATE_BPS,
        zipf_exponent=1.0, arrival_rate=arrival_rate, horizon=100_000, seed=seed,
    )
    args.update(kw)
    return SystemConfig(**args)


def large(arrival_rate: float = 1.0, seed: int = 0, **kw) -> SystemConfig:
    return moderate(arrival_rate, seed, num_users=20, **kw)


def tiny(seed: int = 0, **kw) -> SystemConfig:
    """Two users with two-point amplitude gains and three power levels.

    User 1 is reachable only when its gain is high; user 2 is reachable at
    the middle level in its good state. The power limit equals the average
    power of the priced policy on a whole interval of prices, so the optimal
    per-state map is unique and has no randomized component.
    """
    args = dict(
        num_users=2, catalog_size=1,
        channels=(uniform_channel([0.3, 0.6], tag="bad"), uniform_channel([0.6, 0.8], tag="good")),
        power_levels=(1.5, 2.0, 4.0), avg_power_limit=1.875, file_size=1.0, tx_rate=1.0,
        zipf_exponent=0.0, arrival_rate=1.0, horizon=50_000, seed=seed,
    )
    args.update(kw)
    return SystemConfig(**args)


BUILTIN = {"small": small, "moderate": moderate, "large": large, "tiny": tiny}
