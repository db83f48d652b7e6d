import numpy as np
import pytest

from multicast_rl.model import SystemConfig, exponential_channel


def make_config(num_users=2, catalog=4, **kw) -> SystemConfig:
    base = dict(
        num_users=num_users,
        catalog_size=catalog,
        channels=tuple(exponential_channel(1.0) for _ in range(num_users)),
        power_levels=(1.0, 5.0, 10.0),
        file_size=1.0,
        tx_rate=1.0,
        arrival_rate=1.0,
        horizon=100,
    )
    base.update(kw)
    return SystemConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
