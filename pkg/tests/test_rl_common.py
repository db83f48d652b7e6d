import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multicast_rl.rl_common import ReplayMemory, Schedule, epsilon, project_simplex, substream


def test_ring_overwrites_oldest():
    m = ReplayMemory(2)
    for x in "abc":
        m.push(x)
    assert sorted(m.items) == ["b", "c"]
    assert m.ordered() == ["b", "c"]


def test_small_memory_samples_with_replacement(rng):
    m = ReplayMemory(5)
    m.push("x")
    assert m.sample_minibatch(3, rng) == ["x", "x", "x"]


def test_empty_memory_cannot_be_sampled(rng):
    with pytest.raises(RuntimeError):
        ReplayMemory(3).sample_minibatch(1, rng)


def test_sampling_is_uniform(rng):
    m = ReplayMemory(10)
    for i in range(10):
        m.push(i)
    counts = np.zeros(10)
    for _ in range(10_000):
        for i in m.sample_minibatch(10, rng):
            counts[i] += 1
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 0.1) < 0.015)


@given(st.integers(1, 20), st.lists(st.integers(), max_size=100))
def test_memory_never_exceeds_capacity(cap, items):
    m = ReplayMemory(cap)
    for x in items:
        m.push(x)
        assert len(m) <= cap
    assert m.ordered() == items[-cap:] if items else m.ordered() == []


def test_projection_examples():
    np.testing.assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_simplex([-1, 1, 1]), [0, 0.5, 0.5])
    np.testing.assert_allclose(project_simplex([-2, -3, 0]), [1 / 3, 1 / 3, 1 / 3])


@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_projection_on_simplex_and_idempotent(r):
    p = project_simplex(r)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-9
    np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)


def test_epsilon_examples():
    assert epsilon(0) == 1.0
    assert epsilon(1, 1.0, 0.98) == pytest.approx(0.98)
    assert epsilon(10_000) == 0.01


def test_epsilon_rejects_bad_decay():
    with pytest.raises(ValueError):
        epsilon(1, decay=1.0)


def test_schedule_forms():
    assert Schedule.constant(0.3)(1e9) == 0.3
    assert Schedule("inverse", 0.01, 1e-5)(1e5) == pytest.approx(0.005)
    # loglog is clamped at 1 for small t
    assert Schedule("inverse_loglog", 0.001, 1e-5)(10) == pytest.approx(0.001 / (1 + 1e-4))
    with pytest.raises(ValueError):
        Schedule("cosine", 1.0)


def test_robbins_monro_by_form():
    assert Schedule("inverse", 0.01, 1e-5).satisfies_robbins_monro()
    assert Schedule("inverse_loglog", 0.001, 1e-5).satisfies_robbins_monro()
    assert not Schedule.constant(0.01).satisfies_robbins_monro()


def test_decaying_ratio_vanishes_monotonically():
    fast = Schedule("inverse", 0.01, 1e-5)
    slow = Schedule("inverse_loglog", 0.001, 1e-5)
    t = np.logspace(0, 7, 400)
    ratio = np.array([slow(x) / fast(x) for x in t])
    assert np.all(np.diff(ratio) <= 1e-15)
    assert ratio[-1] < 0.5 * ratio[0]


def test_substreams_independent_and_reproducible():
    a = substream(3, "x").random(5)
    np.testing.assert_array_equal(a, substream(3, "x").random(5))
    assert not np.allclose(a, substream(3, "y").random(5))
    assert not np.allclose(a, substream(4, "x").random(5))
