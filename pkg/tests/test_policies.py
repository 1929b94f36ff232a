import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgecam.energy import CameraMode, EnergyParams
from edgecam.environment import CameraNetworkEnv, CostSchedule, EnvConfig, action_modes, run_episode
from edgecam.policies import (AlternatingPolicy, GreedyPolicy, ThresholdPolicy, action_histogram,
                              alternating, encode, greedy, make_policy, threshold)

E_MAX = EnergyParams().e_max
RAW, LOCAL, STANDBY = CameraMode.TRANSMIT_RAW, CameraMode.DETECT_LOCAL, CameraMode.STANDBY


def modes(index, k=2):
    return list(action_modes(index, k))


def test_greedy_examples():
    cost = 30.0
    assert modes(greedy([E_MAX, E_MAX], cost)) == [RAW, RAW]
    assert modes(greedy([cost / 2, E_MAX], cost)) == [STANDBY, RAW]
    assert modes(greedy([0.0, 0.0], cost)) == [STANDBY, STANDBY]
    assert modes(greedy([cost, cost], cost)) == [RAW, RAW]


def test_threshold_examples():
    assert modes(threshold([0.6 * E_MAX], E_MAX), 1) == [RAW]
    assert modes(threshold([0.4 * E_MAX], E_MAX), 1) == [LOCAL]
    assert modes(threshold([0.5 * E_MAX], E_MAX), 1) == [LOCAL]


def test_alternating_examples():
    assert alternating(0, 2) == 0
    assert modes(0) == [RAW, RAW]
    assert alternating(9, 2) == 0
    assert sorted(alternating(i, 2) for i in range(9)) == list(range(9))
    with pytest.raises(ValueError):
        alternating(-1, 2)


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_alternating_histogram_uniform(k, n):
    n = n % 50 + 1
    hist = action_histogram([alternating(i, k) for i in range(n * 3 ** k)], k)
    assert np.all(hist == n)


@given(st.lists(st.floats(0, E_MAX), min_size=1, max_size=4), st.floats(0, 100), st.integers(0, 10 ** 6))
def test_baselines_return_valid_indices(energies, cost, epoch):
    k = len(energies)
    for index in (greedy(energies, cost), threshold(energies, E_MAX), alternating(epoch, k)):
        assert 0 <= index < 3 ** k
        assert encode(action_modes(index, k)) == index


@given(st.lists(st.floats(0, E_MAX), min_size=1, max_size=4), st.floats(1, 100))
def test_greedy_only_sends_raw_when_affordable(energies, cost):
    for e, m in zip(energies, action_modes(greedy(energies, cost), len(energies))):
        assert m != RAW or e >= cost


def test_greedy_never_depletes_itself_at_constant_cost(two_day_traces):
    env = CameraNetworkEnv(two_day_traces, config=EnvConfig(initial_charge=0.0002),
                           costs=CostSchedule(static=55e-9), seed=0, end_time=2000.0)
    pol = GreedyPolicy()
    env.reset()
    while not env.exhausted:
        index = pol.act(env)
        before = env.available.copy()
        _, out = env.step(index)
        for c, m in enumerate(action_modes(index, env.k)):
            if m == RAW:
                assert before[c] >= env.epoch_cost(RAW)
                assert out.downtime_steps[c] == 0


def test_alternating_counter_advances(two_day_traces):
    env = CameraNetworkEnv(two_day_traces, seed=0, end_time=30.0)
    log = run_episode(env, AlternatingPolicy(), 30)
    np.testing.assert_array_equal(log.action, np.arange(30) % 9)


def test_make_policy_names(two_day_traces):
    env = CameraNetworkEnv(two_day_traces, seed=0)
    assert isinstance(make_policy("greedy", env), GreedyPolicy)
    assert isinstance(make_policy("threshold", env), ThresholdPolicy)
    assert make_policy("dqn", env).agent.online.n_inputs == 2 + 2
    with pytest.raises(ValueError):
        make_policy("dqn_gp", env)
    with pytest.raises(ValueError):
        make_policy("random", env)
