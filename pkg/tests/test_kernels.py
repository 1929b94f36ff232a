"""Compiled and pure-Python kernels must agree."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgecam import _kernels_py, kernels
from edgecam.energy import EnergyParams, synth_solar_trace
from edgecam.world import SceneConfig

compiled = pytest.importorskip("edgecam._kernels")


def _epoch_args(k, stride, gap, modes, e_tr, charge, seed, overlap=0.8):
    p = EnergyParams()
    scene = SceneConfig(overlap=overlap, solo_weights=(1.0,) * k)
    traces = [synth_solar_trace(1, seed=seed, camera=c) for c in range(k)]
    grid = np.arange(0.0, 86400.0 + 2.0, 1.0)
    power = np.ascontiguousarray(np.vstack([t.power(grid, p.eta_eh) for t in traces]))
    ep = np.array([p.e_op, p.e_det, p.f_raw, p.f_proc, p.e_max, p.restart_level])
    sp = np.array([0.5, 15.0, overlap, 0.95, 0.7])

    def fresh():
        return dict(
            obj_ids=np.zeros(256, dtype=np.int64), obj_masks=np.zeros(256, dtype=np.int32),
            scene_state=np.zeros(2, dtype=np.int64), avail=np.full(k, charge * p.e_max),
            powered=np.ones(k, dtype=np.uint8), downtime=np.zeros(k, dtype=np.int64),
            harvested=np.zeros(k), consumed=np.zeros(k), spilled=np.zeros(k),
            raw_tx=np.zeros(k, dtype=np.int64))

    def call(mod, st_):
        out = []
        srng = np.random.default_rng([seed, 1])
        drng = np.random.default_rng([seed, 2])
        for epoch in range(25):
            t0 = 40000.0 + epoch * stride
            out.append(mod.run_epoch(t0, 10, 0.1, stride, gap if epoch else 0.0,
                                     np.asarray(modes, dtype=np.int32), e_tr, power, 0.0, 1.0, ep,
                                     sp, scene.solo_cdf(), st_["obj_ids"], st_["obj_masks"],
                                     st_["scene_state"], st_["avail"], st_["powered"],
                                     st_["downtime"], st_["harvested"], st_["consumed"],
                                     st_["spilled"], st_["raw_tx"], srng, drng))
        return out
    return fresh, call


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 3), stride=st.sampled_from([1, 7, 60]), e_tr=st.floats(25e-9, 85e-9),
       charge=st.sampled_from([0.0, 0.0001, 0.5, 1.0]), seed=st.integers(0, 10_000),
       data=st.data())
def test_run_epoch_backends_agree_bit_for_bit(k, stride, e_tr, charge, seed, data):
    modes = data.draw(st.lists(st.integers(0, 2), min_size=k, max_size=k))
    gap = (stride - 1) * 1.0
    fresh, call = _epoch_args(k, stride, gap, modes, e_tr, charge, seed)
    a, b = fresh(), fresh()
    ra = call(_kernels_py, a)
    rb = call(compiled, b)
    assert ra == rb
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


def _net(rng, sizes):
    n = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    return rng.normal(0.0, 0.7, n)


def test_mlp_forward_backends_agree(rng):
    sizes = np.array([6, 4, 8, 8, 4, 9], dtype=np.int64)
    params = _net(rng, sizes)
    x = rng.random((37, 6))
    np.testing.assert_allclose(compiled.mlp_forward(params, sizes, x),
                               _kernels_py.mlp_forward(params, sizes, x), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("dropout", [0.0, 0.1])
def test_train_step_backends_agree(rng, dropout):
    sizes = np.array([4, 4, 8, 8, 4, 9], dtype=np.int64)
    n = 500
    states = rng.random((n, 4))
    nxt = rng.random((n, 4))
    actions = rng.integers(0, 9, n).astype(np.int64)
    rewards = rng.normal(0, 5, n)
    term = (rng.random(n) < 0.1).astype(float)
    init = _net(rng, sizes)
    runs = []
    for mod in (_kernels_py, compiled):
        online, target = init.copy(), init.copy() * 0.5
        m, v, t = np.zeros_like(init), np.zeros_like(init), np.zeros(1, dtype=np.int64)
        g = np.random.default_rng(77)
        losses = [mod.dqn_train_step(online, target, m, v, t, sizes, states, actions, rewards, nxt,
                                     term, n, 128, 0.95, 1e-3, 0.9, 0.999, 1e-8, dropout, 1e-3, g)
                  for _ in range(20)]
        runs.append((online, target, m, v, t, losses, g.random()))
    a, b = runs
    for x, y in zip(a[:4], b[:4]):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)
    assert a[4][0] == b[4][0] == 20
    np.testing.assert_allclose(np.array(a[5]), np.array(b[5]), rtol=1e-9)
    # identical generator consumption
    assert a[6] == b[6]


def test_sample_indices_distinct(rng):
    idx = _kernels_py.sample_indices(200, 128, rng.random)
    assert len(set(idx.tolist())) == 128
    assert idx.min() >= 0 and idx.max() < 200


def test_backend_selection():
    assert kernels.BACKEND in ("python", "cython")
    assert kernels.compiled_available()
