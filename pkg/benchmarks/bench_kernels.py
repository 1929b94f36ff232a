"""Compare the compiled kernels with the pure-Python reference.

    python benchmarks/bench_kernels.py [--repeat N]

Prints microseconds per call for each kernel and backend, and the speedup.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from edgecam import _kernels_py
from edgecam.dqn import HIDDEN, QNetwork
from edgecam.energy import EnergyParams, synth_solar_trace
from edgecam.world import SceneConfig

try:
    from edgecam import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None


def epoch_case(mod, k=2):
    p = EnergyParams()
    scene = SceneConfig(solo_weights=(1.0,) * k)
    traces = [synth_solar_trace(1, seed=0, camera=c) for c in range(k)]
    grid = np.arange(0.0, 86400.0 + 2.0, 1.0)
    power = np.ascontiguousarray(np.vstack([t.power(grid, p.eta_eh) for t in traces]))
    ep = np.array([p.e_op, p.e_det, p.f_raw, p.f_proc, p.e_max, p.restart_level])
    sp = np.array([scene.arrival_rate, scene.dwell_mean, scene.overlap, 0.95, 0.7])
    cdf = scene.solo_cdf()
    st = dict(obj_ids=np.zeros(1024, dtype=np.int64), obj_masks=np.zeros(1024, dtype=np.int32),
              scene_state=np.zeros(2, dtype=np.int64), avail=np.full(k, 0.5 * p.e_max),
              powered=np.ones(k, dtype=np.uint8), downtime=np.zeros(k, dtype=np.int64),
              harvested=np.zeros(k), consumed=np.zeros(k), spilled=np.zeros(k),
              raw_tx=np.zeros(k, dtype=np.int64))
    modes = np.zeros(k, dtype=np.int32)
    srng, drng = np.random.default_rng(1), np.random.default_rng(2)
    clock = [40000.0]

    def call():
        clock[0] += 1.0
        mod.run_epoch(clock[0], 10, 0.1, 1.0, 0.0, modes, 55e-9, power, 0.0, 1.0, ep, sp, cdf,
                      st["obj_ids"], st["obj_masks"], st["scene_state"], st["avail"],
                      st["powered"], st["downtime"], st["harvested"], st["consumed"],
                      st["spilled"], st["raw_tx"], srng, drng)
    return call


def train_case(mod, k=2, batch=128):
    dim = k + 2
    sizes = np.array((dim,) + HIDDEN + (3 ** k,), dtype=np.int64)
    rng = np.random.default_rng(0)
    online = QNetwork.initialized(sizes, rng).params
    target = online.copy()
    m, v, t = np.zeros_like(online), np.zeros_like(online), np.zeros(1, dtype=np.int64)
    n = 5000
    states, next_states = rng.random((n, dim)), rng.random((n, dim))
    actions = rng.integers(0, 3 ** k, n)
    rewards, terminal = rng.normal(size=n), np.zeros(n)
    trng = np.random.default_rng(3)

    def call():
        mod.dqn_train_step(online, target, m, v, t, sizes, states, actions, rewards, next_states,
                           terminal, n, batch, 0.95, 1e-3, 0.9, 0.999, 1e-8, 0.1, 1e-3, trng)
    return call


def forward_case(mod, k=2):
    sizes = np.array((k + 2,) + HIDDEN + (3 ** k,), dtype=np.int64)
    params = QNetwork.initialized(sizes, np.random.default_rng(0)).params
    x = np.random.default_rng(1).random((1, k + 2))
    return lambda: mod.mlp_forward(params, sizes, x)


def per_call_us(fn, repeat):
    fn()
    best = min(timeit.repeat(fn, number=repeat, repeat=3))
    return best / repeat * 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args(argv)
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    print(f"{'kernel':14s}" + "".join(f"{name:>12s}" for name, _ in backends) + "     speedup")
    for label, case, scale in (("run_epoch", epoch_case, 1), ("train_step", train_case, 4),
                               ("mlp_forward", forward_case, 1)):
        times = [per_call_us(case(mod), max(1, args.repeat // scale)) for _, mod in backends]
        speed = f"{times[0] / times[-1]:10.1f}x" if len(times) > 1 else "   (no compiled build)"
        print(f"{label:14s}" + "".join(f"{t:10.1f}us" for t in times) + speed)


if __name__ == "__main__":
    main()
