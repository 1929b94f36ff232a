"""Pure-Python implementations of the hot loops.

These are the reference versions of the routines in ``_kernels.pyx`` and are
used whenever the compiled extension is unavailable. Both consume uniforms
from the supplied generators in the same order, so epoch simulations agree
bit for bit and network updates agree to rounding.
"""
from __future__ import annotations

import math

import numpy as np

# eparams layout
E_OP, E_DET, F_RAW, F_PROC, E_MAX, RESTART = range(6)
# sparams layout
ARRIVAL, DWELL, OVERLAP, P_CLOUD, P_LOCAL = range(5)

BACKEND = "python"


def _poisson(lam, uniform):
    total = 0
    while lam > 0.0:
        chunk = min(lam, 30.0)
        lam -= chunk
        limit = math.exp(-chunk)
        p = uniform()
        while p > limit:
            total += 1
            p *= uniform()
    return total


def _advance(duration, frame_dt, sparams, solo_cdf, n_cam, obj_ids, obj_masks, scene_state, uniform):
    n = int(scene_state[0])
    next_id = int(scene_state[1])
    dwell = sparams[DWELL]
    p_leave = -math.expm1(-duration / dwell)
    w = 0
    for i in range(n):
        if not uniform() < p_leave:
            obj_ids[w] = obj_ids[i]
            obj_masks[w] = obj_masks[i]
            w += 1
    if duration <= frame_dt * (1 + 1e-9):
        lam = sparams[ARRIVAL] * duration
    else:
        lam = sparams[ARRIVAL] * dwell * -math.expm1(-duration / dwell)
    arrivals = _poisson(lam, uniform)
    full = (1 << n_cam) - 1
    for _ in range(arrivals):
        if w >= obj_ids.shape[0]:
            raise OverflowError("scene object capacity exceeded")
        if uniform() < sparams[OVERLAP]:
            mask = full
        else:
            u = uniform()
            cam = n_cam - 1
            for k in range(n_cam):
                if u < solo_cdf[k]:
                    cam = k
                    break
            mask = 1 << cam
        obj_ids[w] = next_id
        obj_masks[w] = mask
        next_id += 1
        w += 1
    scene_state[0] = w
    scene_state[1] = next_id


def energy_frame(t, dt, scale, is_guard, modes, e_op, raw_cost, local_cost, e_max, restart,
                 power, grid_t0, grid_dt, avail, powered, downtime, harvested, consumed,
                 spilled, raw_tx, active):
    """Energy bookkeeping for one frame; fills ``active`` with 0 (no image),
    1 (cloud) or 2 (local) per camera."""
    n_grid = power.shape[1]
    x = (t - grid_t0) / grid_dt
    if x <= 0.0:
        gi, frac = 0, 0.0
    elif x >= n_grid - 1:
        gi, frac = n_grid - 2, 1.0
    else:
        gi = int(x)
        frac = x - gi
    for k in range(avail.shape[0]):
        h = (power[k, gi] + frac * (power[k, gi + 1] - power[k, gi])) * dt * scale
        if not powered[k] and avail[k] >= restart:
            powered[k] = 1
        active[k] = 0
        if powered[k]:
            m = 0 if is_guard else modes[k]
            if m == 0:
                c = (e_op + raw_cost) * scale
            elif m == 1:
                c = (e_op + local_cost) * scale
            else:
                c = e_op * scale
            level = avail[k] + h - c
            if level <= 0.0:
                consumed[k] += avail[k] + h
                avail[k] = 0.0
                powered[k] = 0
                downtime[k] += scale
            else:
                if level > e_max:
                    spilled[k] += level - e_max
                    level = e_max
                consumed[k] += c
                avail[k] = level
                if m == 0:
                    raw_tx[k] += 1
                    active[k] = 1
                elif m == 1:
                    active[k] = 2
        else:
            level = avail[k] + h
            if level > e_max:
                spilled[k] += level - e_max
                level = e_max
            avail[k] = level
            downtime[k] += scale
        harvested[k] += h


def run_epoch(t0, n_frames, dt, scale, gap, modes, e_tr, power, grid_t0, grid_dt,
              eparams, sparams, solo_cdf, obj_ids, obj_masks, scene_state,
              avail, powered, downtime, harvested, consumed, spilled, raw_tx,
              scene_rng, detect_rng):
    """Simulate one decision epoch in place.

    The first ``n_frames - 1`` frames follow ``modes``; the last frame is the
    guard frame in which every powered camera offloads a raw image. Energy
    flows and downtime are multiplied by ``scale`` (the epoch stride).
    ``gap`` seconds of scene evolution are skipped before the first frame.

    Returns ``(pre_guard_count, guard_count, recall_sum)``.
    """
    n_cam = avail.shape[0]
    su = scene_rng.random
    du = detect_rng.random
    e_op = eparams[E_OP]
    e_max = eparams[E_MAX]
    restart = eparams[RESTART]
    raw_cost = eparams[F_RAW] * e_tr
    local_cost = eparams[E_DET] + eparams[F_PROC] * e_tr
    p_cloud = sparams[P_CLOUD]
    p_local = sparams[P_LOCAL]
    active = [0] * n_cam
    hit = np.zeros(obj_ids.shape[0], dtype=np.uint8)
    pre_guard = 0
    guard = 0
    recall_sum = 0.0

    if gap > 0.0:
        _advance(gap, dt, sparams, solo_cdf, n_cam, obj_ids, obj_masks, scene_state, su)

    for f in range(n_frames):
        is_guard = f == n_frames - 1
        _advance(dt, dt, sparams, solo_cdf, n_cam, obj_ids, obj_masks, scene_state, su)
        energy_frame(t0 + f * dt, dt, scale, is_guard, modes, e_op, raw_cost, local_cost, e_max,
                     restart, power, grid_t0, grid_dt, avail, powered, downtime, harvested,
                     consumed, spilled, raw_tx, active)

        n = int(scene_state[0])
        hit[:n] = 0
        for k in range(n_cam):
            if active[k] == 0:
                continue
            p = p_cloud if active[k] == 1 else p_local
            bit = 1 << k
            for i in range(n):
                if obj_masks[i] & bit:
                    if du() < p:
                        hit[i] = 1
        count = int(hit[:n].sum())
        recall_sum += 1.0 if n == 0 else count / n
        if f == n_frames - 2:
            pre_guard = count
        if is_guard:
            guard = count
    return pre_guard, guard, recall_sum


def _layers(params, sizes):
    out = []
    off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = params[off:off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = params[off:off + n_out]
        off += n_out
        out.append((w, b))
    return out


def mlp_forward(params, sizes, x):
    """Batched forward pass without dropout; ``x`` has shape (B, sizes[0])."""
    a = np.asarray(x, dtype=float)
    layers = _layers(params, sizes)
    for w, b in layers[:-1]:
        a = np.maximum(a @ w.T + b, 0.0)
    w, b = layers[-1]
    return a @ w.T + b


def sample_indices(size, batch, uniform):
    chosen = []
    seen = set()
    for _ in range(batch):
        while True:
            j = int(uniform() * size)
            if j >= size:
                j = size - 1
            if j not in seen:
                break
        seen.add(j)
        chosen.append(j)
    return np.array(chosen, dtype=np.int64)


def mlp_loss_grad(params, sizes, x, actions, y, masks):
    """MSE loss on the chosen actions and its gradient w.r.t. ``params``.

    ``masks`` holds per-hidden-layer multipliers (already scaled), or None.
    """
    layers = _layers(params, sizes)
    bsz = x.shape[0]
    acts = [x]
    pre = []
    a = x
    for li, (w, b) in enumerate(layers[:-1]):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        if masks is not None:
            a = a * masks[li]
        acts.append(a)
    w, b = layers[-1]
    q = a @ w.T + b
    rows = np.arange(bsz)
    q_sel = q[rows, actions]
    diff = q_sel - y
    loss = float(np.mean(diff * diff))
    grad = np.zeros_like(params)
    glayers = _layers(grad, sizes)
    dz = np.zeros_like(q)
    dz[rows, actions] = 2.0 * diff / bsz
    for li in range(len(layers) - 1, -1, -1):
        gw, gb = glayers[li]
        gw[...] = dz.T @ acts[li]
        gb[...] = dz.sum(axis=0)
        if li == 0:
            break
        da = dz @ layers[li][0]
        if masks is not None:
            da = da * masks[li - 1]
        dz = da * (pre[li - 1] > 0.0)
    return loss, grad, float(np.mean(q_sel))


def dqn_train_step(online, target, adam_m, adam_v, adam_t, sizes, states, actions, rewards,
                   next_states, terminal, size, batch, gamma, lr, beta1, beta2, eps,
                   dropout, tau, rng):
    """One replay minibatch update: TD targets, MSE, Adam, soft target update.

    ``adam_t`` is a one-element int64 array holding the step counter.
    Returns ``(loss, mean_q)``.
    """
    uniform = rng.random
    idx = sample_indices(size, batch, uniform)
    hidden = list(sizes[1:-1])
    masks = None
    if dropout > 0.0:
        u = rng.random((batch, sum(hidden)))
        keep = (u >= dropout) / (1.0 - dropout)
        masks = []
        off = 0
        for h in hidden:
            masks.append(keep[:, off:off + h])
            off += h
    s = states[idx]
    a = actions[idx].astype(np.int64)
    s2 = next_states[idx]
    q_next = mlp_forward(target, sizes, s2)
    y = rewards[idx] + gamma * (1.0 - terminal[idx]) * q_next.max(axis=1)
    loss, grad, mean_q = mlp_loss_grad(online, sizes, s, a, y, masks)
    adam_t[0] += 1
    t = int(adam_t[0])
    adam_m[:] = beta1 * adam_m + (1.0 - beta1) * grad
    adam_v[:] = beta2 * adam_v + (1.0 - beta2) * grad * grad
    mhat = adam_m / (1.0 - beta1 ** t)
    vhat = adam_v / (1.0 - beta2 ** t)
    online -= lr * mhat / (np.sqrt(vhat) + eps)
    target[:] = tau * online + (1.0 - tau) * target
    return loss, mean_q
