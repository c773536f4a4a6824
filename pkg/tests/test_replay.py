import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ramdqn.replay import ReplayMemory, Transition


def make_transition(tag):
    return Transition(state={"ram": np.full(4, tag, dtype=np.float32)},
                      action=tag % 3, reward=float(tag),
                      next_state={"ram": np.full(4, tag + 1, dtype=np.float32)},
                      terminal=False)


def test_push_to_empty():
    mem = ReplayMemory(capacity=10)
    mem.push(make_transition(0))
    assert len(mem) == 1


def test_fifo_eviction():
    mem = ReplayMemory(capacity=2)
    a, b, c = (make_transition(i) for i in range(3))
    mem.push(a)
    mem.push(b)
    mem.push(c)
    assert len(mem) == 2
    assert mem.contents() == [b, c]


def test_default_capacity_bound():
    mem = ReplayMemory()
    t = make_transition(0)
    for _ in range(100_001):
        mem.push(t)
    assert len(mem) == 100_000


def test_sample_single():
    mem = ReplayMemory(capacity=4)
    t = make_transition(7)
    mem.push(t)
    assert mem.sample_minibatch(1, np.random.default_rng(0)) == [t]


def test_sample_insufficient_contents():
    mem = ReplayMemory(capacity=64)
    for i in range(31):
        mem.push(make_transition(i))
    with pytest.raises(ValueError):
        mem.sample_minibatch(32, np.random.default_rng(0))


def test_sampling_does_not_mutate():
    mem = ReplayMemory(capacity=8)
    for i in range(8):
        mem.push(make_transition(i))
    before = mem.contents()
    mem.sample_minibatch(8, np.random.default_rng(1))
    assert mem.contents() == before


def test_sampling_deterministic_given_seed():
    mem = ReplayMemory(capacity=16)
    for i in range(16):
        mem.push(make_transition(i))
    s1 = mem.sample_minibatch(8, np.random.default_rng(5))
    s2 = mem.sample_minibatch(8, np.random.default_rng(5))
    assert s1 == s2


def test_chi_square_uniformity():
    # 1e5 draws over 10 items; chi-square test must not reject uniformity at
    # significance 0.001.
    mem = ReplayMemory(capacity=10)
    for i in range(10):
        mem.push(make_transition(i))
    rng = np.random.default_rng(123)
    counts = np.zeros(10)
    for _ in range(10_000):
        for t in mem.sample_minibatch(10, rng):
            counts[int(t.reward)] += 1
    _, p = stats.chisquare(counts)
    assert p > 0.001


@given(st.integers(1, 20), st.integers(1, 40))
@settings(max_examples=60, deadline=None)
def test_contents_are_last_k_pushes_in_order(capacity, pushes):
    mem = ReplayMemory(capacity=capacity)
    items = [make_transition(i) for i in range(pushes)]
    for t in items:
        mem.push(t)
    assert mem.contents() == items[-capacity:]
