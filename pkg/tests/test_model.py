import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multicast_rl.model import (
    GainSampler,
    MdpState,
    draw_gains,
    exponential_channel,
    required_power,
    reward,
    sample_request,
    uniform_channel,
    zipf_pmf,
)

from conftest import make_config


def test_required_power_unit_gain():
    assert required_power(1.0, make_config()) == pytest.approx(1.0)


def test_required_power_weak_gain():
    assert required_power(0.1, make_config()) == pytest.approx(100.0)


def test_required_power_noise_and_efficiency():
    cfg = make_config(noise_power=2.0, spectral_efficiency=2.0)
    assert required_power(0.5, cfg) == pytest.approx(24.0)


@pytest.mark.parametrize("gain", [0.0, -1.0])
def test_required_power_rejects_non_positive_gain(gain):
    with pytest.raises(ValueError):
        required_power(gain, make_config())


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.1, 5))
def test_required_power_decreasing_in_gain_linear_in_noise(g1, g2, noise):
    cfg = make_config()
    if g1 < g2:
        assert required_power(g1, cfg) > required_power(g2, cfg)
    scaled = make_config(noise_power=noise)
    assert required_power(g1, scaled) == pytest.approx(noise * required_power(g1, cfg))


def test_reward_no_requesters_is_zero():
    s = MdpState([1.0, 1.0], [0, 0])
    assert reward(s, 50.0, make_config()) == 0


def test_reward_counts_reachable_requesters():
    s = MdpState([1.0, 0.1], [1, 1])
    assert reward(s, 7.0, make_config()) == 1


def test_reward_tie_counts_as_failure():
    s = MdpState([1.0], [1])
    assert reward(s, 1.0, make_config(num_users=1)) == 0


def test_reward_dominating_power_reaches_all_requesters():
    s = MdpState([0.5, 0.2, 1.0], [1, 0, 1])
    assert reward(s, 1e6, make_config(num_users=3)) == 2


@given(
    st.lists(st.tuples(st.floats(0.05, 3), st.booleans()), min_size=1, max_size=6),
    st.floats(0.1, 60),
    st.floats(0.1, 60),
)
def test_reward_monotone_and_bounded(users, p1, p2):
    gains = [g for g, _ in users]
    req = [int(r) for _, r in users]
    cfg = make_config(num_users=len(users))
    s = MdpState(gains, req)
    lo, hi = sorted((p1, p2))
    assert reward(s, lo, cfg) <= reward(s, hi, cfg) <= sum(req)


def test_state_flatten_has_2l_entries():
    s = MdpState([0.5, 2.0, 1.0], [1, 0, 1])
    x = s.flatten(np.array([0.5, 1.0, 2.0]))
    assert x.shape == (6,)
    np.testing.assert_allclose(x, [1.0, 2.0, 0.5, 1, 0, 1])


def test_singleton_support_is_constant(rng):
    m = [uniform_channel([0.5])]
    assert all(draw_gains(m, rng)[0] == 0.5 for _ in range(100))


def test_exponential_empirical_mean(rng):
    m = exponential_channel(0.1)
    draws = np.array([draw_gains([m], rng)[0] for _ in range(100_000)])
    assert abs(draws.mean() - 0.1) < 0.02 * 0.1


def test_power_quantity_draws_square_roots(rng):
    m = exponential_channel(1.0, quantity="power")
    draws = GainSampler([m] * 4)
    a = np.concatenate([draws(rng) for _ in range(25_000)])
    # squared amplitudes are exponential with the configured mean
    assert abs(np.mean(a**2) - 1.0) < 0.02


def test_independent_users_uncorrelated(rng):
    sampler = GainSampler([exponential_channel(1.0), exponential_channel(0.1)])
    d = np.array([sampler(rng) for _ in range(100_000)])
    assert abs(np.corrcoef(d[:, 0], d[:, 1])[0, 1]) < 0.02


def test_gain_draws_are_seed_deterministic():
    models = [exponential_channel(1.0), uniform_channel([0.1, 0.2])]
    a = [draw_gains(models, np.random.default_rng(7)) for _ in range(1)]
    b = [draw_gains(models, np.random.default_rng(7)) for _ in range(1)]
    np.testing.assert_array_equal(a, b)
    s1, s2 = GainSampler(models), GainSampler(models)
    r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
    for _ in range(50):
        np.testing.assert_array_equal(s1(r1), s2(r2))


def test_zipf_two_files():
    np.testing.assert_allclose(zipf_pmf(1.0, 2), [2 / 3, 1 / 3])


def test_zipf_zero_uniform_chi_square(rng):
    m = 10
    counts = np.zeros(m)
    for _ in range(100_000):
        f, _ = sample_request(0.0, m, 3, rng)
        counts[f] += 1
    expected = 100_000 / m
    chi2 = np.sum((counts - expected) ** 2 / expected)
    # 1% critical value of chi-square with 9 degrees of freedom
    assert chi2 < 21.67


@settings(max_examples=10, deadline=None)
@given(st.floats(0, 3), st.integers(1, 6))
def test_user_marginal_uniform(alpha, users):
    rng = np.random.default_rng(0)
    counts = np.zeros(users)
    for _ in range(6000):
        _, u = sample_request(alpha, 5, users, rng)
        counts[u] += 1
    assert np.all(np.abs(counts / 6000 - 1 / users) < 0.03)


def test_config_rejects_bad_levels():
    with pytest.raises(ValueError):
        make_config(power_levels=(2.0, 1.0))
    with pytest.raises(ValueError):
        make_config(power_levels=(0.0, 1.0))


def test_config_rejects_channel_count_mismatch():
    with pytest.raises(ValueError):
        make_config(num_users=3, channels=(exponential_channel(1.0),))


def test_service_time():
    assert make_config(file_size=80e6, tx_rate=40e6).service_time == 2.0
