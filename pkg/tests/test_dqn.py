import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from edgecam import _kernels_py
from edgecam.dqn import (AdamState, ContractError, DQNAgent, QNetwork, ReplayMemory,
                         TrainerConfig, soft_update, td_targets)


def _small_net(seed=0, sizes=(3, 4, 3, 2)):
    net = QNetwork.initialized(sizes, np.random.default_rng(seed), dropout=0.0)
    for _, b in net.layers():
        b[...] = np.random.default_rng(seed + 1).uniform(0.1, 0.3, size=b.shape)
    return net


# -- network -------------------------------------------------------------------

def test_zero_network_outputs_zero():
    net = QNetwork((6, 4, 8, 8, 4, 9))
    np.testing.assert_array_equal(net.forward(np.ones(6)), np.zeros(9))


def test_rectifier_clips_negative_preactivation():
    net = QNetwork((1, 1, 1))
    (w1, b1), (w2, b2) = net.layers()
    w1[...] = 1.0
    b1[...] = -5.0
    w2[...] = 1.0
    assert net.forward(np.array([2.0]))[0] == 0.0
    assert net.forward(np.array([7.0]))[0] == pytest.approx(2.0)


def test_forward_deterministic_without_dropout():
    net = QNetwork.initialized((6, 4, 8, 8, 4, 9), np.random.default_rng(3))
    x = np.random.default_rng(4).random(6)
    np.testing.assert_array_equal(net.forward(x), net.forward(x))


def test_output_dimension_is_joint_action_count():
    for k in (1, 2, 3):
        net = QNetwork.initialized((2 * k + 1, 4, 8, 8, 4, 3 ** k), np.random.default_rng(0))
        assert net.forward(np.zeros(2 * k + 1)).shape == (3 ** k,)


def test_state_dimension_mismatch_is_contract_error():
    net = QNetwork((5, 4, 9))
    with pytest.raises(ContractError):
        net.forward(np.zeros(6))


def test_parameter_count_checked():
    with pytest.raises(ValueError):
        QNetwork((2, 3), params=np.zeros(5))


# -- targets and soft update ---------------------------------------------------

def _constant_net(value, n_out=3, n_in=2):
    net = QNetwork((n_in, 1, n_out))
    net.layers()[-1][1][...] = value
    return net


def test_td_target_terminal():
    y = td_targets([4.0], np.zeros((1, 2)), [True], _constant_net(100.0), 0.9)
    assert y[0] == 4.0


def test_td_target_myopic():
    y = td_targets([-45.0], np.zeros((1, 2)), [False], _constant_net(7.0), 0.0)
    assert y[0] == -45.0


def test_td_target_discounted():
    net = _constant_net(0.0)
    net.layers()[-1][1][...] = [0.5, 2.0, -1.0]
    y = td_targets([1.0], np.zeros((1, 2)), [False], net, 0.9)
    assert y[0] == pytest.approx(2.8, abs=1e-12)


def test_soft_update_example():
    target = np.zeros(1)
    soft_update(np.ones(1), target, 1e-3)
    assert target[0] == 0.001


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.integers(0, 2 ** 31))
def test_soft_update_contracts_toward_online(online, seed):
    online = np.array(online)
    target = np.random.default_rng(seed).uniform(-1e3, 1e3, size=online.size)
    before = target.copy()
    soft_update(online, target, 1e-3)
    np.testing.assert_allclose(np.abs(target - online), (1 - 1e-3) * np.abs(before - online),
                               rtol=1e-9, atol=1e-9)


def test_train_step_soft_update_formula():
    cfg = TrainerConfig(batch_size=4, warmup=4, replay_capacity=16, dropout=0.0)
    agent = DQNAgent(2, 3, cfg, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(8):
        agent.observe(rng.random(2), int(rng.integers(3)), 1.0, rng.random(2))
    # observe already trained; take one more update by hand and compare
    theta_t = agent.target.params.copy()
    agent.train_step()
    expected = 1e-3 * agent.online.params + (1 - 1e-3) * theta_t
    np.testing.assert_array_equal(agent.target.params, expected)


# -- gradients -----------------------------------------------------------------

def test_zero_residual_gives_zero_gradient():
    net = _small_net()
    x = np.random.default_rng(5).random((6, 3))
    a = np.array([0, 1, 0, 1, 1, 0])
    y = _kernels_py.mlp_forward(net.params, net.sizes, x)[np.arange(6), a]
    loss, grad, _ = net.loss_and_grad(x, a, y)
    assert loss == 0.0
    assert not grad.any()


def _central_difference(net, x, a, y, masks=None, h=1e-6):
    out = np.zeros(net.n_params)
    for i in range(net.n_params):
        p = net.params.copy()
        p[i] += h
        lp = _kernels_py.mlp_loss_grad(p, net.sizes, x, a, y, masks)[0]
        p[i] -= 2 * h
        lm = _kernels_py.mlp_loss_grad(p, net.sizes, x, a, y, masks)[0]
        out[i] = (lp - lm) / (2 * h)
    return out


def _rel_err(g, fd):
    return np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)


def test_one_parameter_net_gradient_matches_finite_difference():
    # q = w * x with no hidden layer and no bias contribution to check
    net = QNetwork((1, 1), params=np.array([0.7, 0.0]))
    x = np.array([[1.5], [-2.0], [0.3]])
    a = np.zeros(3, dtype=np.int64)
    y = np.array([0.2, 0.5, -1.0])
    _, grad, _ = net.loss_and_grad(x, a, y)
    analytic = np.mean(2 * (0.7 * x[:, 0] - y) * x[:, 0])
    assert grad[0] == pytest.approx(analytic, rel=1e-12)
    assert _rel_err(grad, _central_difference(net, x, a, y)).max() < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_backprop_matches_finite_difference_every_parameter(seed):
    net = _small_net(seed)
    assert net.n_params <= 50
    rng = np.random.default_rng(100 + seed)
    x = rng.uniform(0.2, 1.0, size=(8, 3))
    a = rng.integers(0, 2, size=8)
    y = rng.normal(size=8)
    masks = [np.where(rng.random((8, h)) < 0.1, 0.0, 1 / 0.9) for h in (4, 3)]
    for m in (None, masks):
        _, grad, _ = net.loss_and_grad(x, a, y, m)
        fd = _central_difference(net, x, a, y, m)
        live = (np.abs(grad) > 1e-7) | (np.abs(fd) > 1e-7)
        assert _rel_err(grad[live], fd[live]).max() < 1e-4
        np.testing.assert_allclose(grad[~live], fd[~live], atol=1e-7)


def test_adam_first_step_moves_by_learning_rate():
    p = np.array([1.0, -1.0])
    AdamState.zeros(2, lr=0.01).apply(p, np.array([3.0, -0.5]))
    np.testing.assert_allclose(p, [0.99, -0.99], rtol=1e-6)


# -- replay --------------------------------------------------------------------

@given(st.integers(1, 30), st.integers(0, 40))
def test_replay_fifo_eviction(capacity, extra):
    mem = ReplayMemory(capacity, 1)
    total = capacity + extra
    for i in range(total):
        mem.push([float(i)], 0, float(i), [0.0])
    assert len(mem) == capacity
    stored = set(mem.rewards.tolist())
    assert stored == set(float(i) for i in range(extra, total))


@given(st.integers(1, 50), st.data())
def test_replay_samples_distinct_indices(size, data):
    batch = data.draw(st.integers(1, size))
    mem = ReplayMemory(64, 1)
    for i in range(size):
        mem.push([0.0], 0, 0.0, [0.0])
    idx = mem.sample(batch, np.random.default_rng(data.draw(st.integers(0, 999))))
    assert len(set(idx.tolist())) == batch
    assert idx.min() >= 0 and idx.max() < size


def test_replay_oversample_rejected():
    mem = ReplayMemory(4, 1)
    mem.push([0.0], 0, 0.0, [0.0])
    with pytest.raises(ContractError):
        mem.sample(2, np.random.default_rng(0))


def test_replay_sampling_uniform():
    mem = ReplayMemory(10, 1)
    for i in range(10):
        mem.push([0.0], 0, 0.0, [0.0])
    rng = np.random.default_rng(7)
    counts = np.bincount(np.concatenate([mem.sample(3, rng) for _ in range(5000)]), minlength=10)
    assert stats.chisquare(counts).pvalue > 0.01


# -- action selection ----------------------------------------------------------

def test_epsilon_one_is_uniform():
    agent = DQNAgent(5, 9, seed=2)
    draws = [agent.select_action(np.zeros(5), 1.0) for _ in range(10_000)]
    counts = np.bincount(draws, minlength=9)
    assert stats.chisquare(counts).pvalue > 0.01


def test_greedy_picks_argmax_and_lowest_tie():
    agent = DQNAgent(2, 9, TrainerConfig(hidden=(1,)), seed=0)
    agent.online.params[:] = 0.0
    assert agent.select_action(np.zeros(2), 0.0) == 0
    agent.online.layers()[-1][1][-1] = 1.0
    assert agent.select_action(np.zeros(2), 0.0) == 8


def test_epsilon_out_of_range_rejected():
    with pytest.raises(ContractError):
        DQNAgent(2, 3).select_action(np.zeros(2), 1.5)


def test_epsilon_schedule_linear():
    agent = DQNAgent(2, 3, TrainerConfig(eps_decay_steps=100, eps_end=0.1))
    assert agent.epsilon(0) == 1.0
    assert agent.epsilon(50) == pytest.approx(0.55)
    assert agent.epsilon(10_000) == pytest.approx(0.1)


# -- training loop and persistence ---------------------------------------------

def test_train_step_is_noop_until_warm():
    agent = DQNAgent(2, 3, TrainerConfig(batch_size=8, warmup=20), seed=0)
    for i in range(19):
        assert agent.observe(np.zeros(2), 0, 0.0, np.zeros(2)) is None
    before = agent.online.params.copy()
    assert agent.train_step() is None
    np.testing.assert_array_equal(before, agent.online.params)
    out = agent.observe(np.zeros(2), 0, 0.0, np.zeros(2))
    assert out is not None and np.isfinite(out[0])


@pytest.mark.parametrize("bad", [dict(batch_size=10, replay_capacity=5), dict(soft_update_tau=0.0),
                                 dict(gamma=1.0), dict(dropout=1.0)])
def test_trainer_config_validation(bad):
    with pytest.raises(ValueError):
        TrainerConfig(**bad)


def _drive(agent, rng, n):
    s = rng.random(3)
    for _ in range(n):
        a = agent.select_action(s)
        s2 = rng.random(3)
        agent.observe(s, a, float(rng.normal()), s2, bool(rng.random() < 0.05))
        s = s2


def test_checkpoint_resume_is_bit_exact(tmp_path):
    cfg = TrainerConfig(batch_size=16, warmup=32, replay_capacity=100, curve_every=5,
                        eps_decay_steps=200)
    a = DQNAgent(3, 9, cfg, seed=5)
    _drive(a, np.random.default_rng(0), 150)
    a.save(tmp_path / "ck.npz")
    b = DQNAgent.load(tmp_path / "ck.npz")
    _drive(a, np.random.default_rng(1), 150)
    _drive(b, np.random.default_rng(1), 150)
    np.testing.assert_array_equal(a.online.params, b.online.params)
    np.testing.assert_array_equal(a.target.params, b.target.params)
    assert a.curve == b.curve
    a.write_curve(tmp_path / "a.csv")
    b.write_curve(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "step,loss,epsilon,mean_q"


def test_parameters_stay_finite_under_training():
    agent = DQNAgent(3, 9, TrainerConfig(batch_size=16, warmup=16, replay_capacity=500), seed=1)
    _drive(agent, np.random.default_rng(2), 400)
    assert np.all(np.isfinite(agent.online.params))
    assert np.all(np.isfinite(agent.target.params))
