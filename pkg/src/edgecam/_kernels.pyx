# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the routines in ``_kernels_py``.

Uniform draws come straight from the numpy bit generators, in the same order
as the pure-Python reference.
"""
import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, expm1, sqrt, pow
from libc.stdlib cimport malloc, free
from numpy.random cimport bitgen_t

cnp.import_array()

BACKEND = "cython"

cdef enum:
    E_OP = 0
    E_DET = 1
    F_RAW = 2
    F_PROC = 3
    E_MAX = 4
    RESTART = 5

cdef enum:
    ARRIVAL = 0
    DWELL = 1
    OVERLAP = 2
    P_CLOUD = 3
    P_LOCAL = 4


cdef bitgen_t* _bitgen(object generator) except NULL:
    capsule = generator.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _u(bitgen_t* g) noexcept nogil:
    return g.next_double(g.state)


cdef long _poisson(double lam, bitgen_t* g) noexcept nogil:
    cdef long total = 0
    cdef double chunk, limit, p
    while lam > 0.0:
        chunk = lam if lam < 30.0 else 30.0
        lam -= chunk
        limit = exp(-chunk)
        p = _u(g)
        while p > limit:
            total += 1
            p *= _u(g)
    return total


cdef int _advance(double duration, double frame_dt, const double[::1] sparams,
                  const double[::1] solo_cdf, int n_cam, long long[::1] obj_ids,
                  int[::1] obj_masks, long long[::1] scene_state, bitgen_t* g) except -1:
    cdef long n = <long> scene_state[0]
    cdef long long next_id = scene_state[1]
    cdef double dwell = sparams[DWELL]
    cdef double p_leave = -expm1(-duration / dwell)
    cdef long i, w = 0, a, arrivals
    cdef double lam, u
    cdef int k, cam, mask
    cdef int full = (1 << n_cam) - 1
    cdef long cap = obj_ids.shape[0]
    for i in range(n):
        if not _u(g) < p_leave:
            obj_ids[w] = obj_ids[i]
            obj_masks[w] = obj_masks[i]
            w += 1
    if duration <= frame_dt * (1 + 1e-9):
        lam = sparams[ARRIVAL] * duration
    else:
        lam = sparams[ARRIVAL] * dwell * -expm1(-duration / dwell)
    arrivals = _poisson(lam, g)
    for a in range(arrivals):
        if w >= cap:
            raise OverflowError("scene object capacity exceeded")
        if _u(g) < sparams[OVERLAP]:
            mask = full
        else:
            u = _u(g)
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
    return 0


def run_epoch(double t0, int n_frames, double dt, long scale, double gap,
              const int[::1] modes, double e_tr,
              const double[:, ::1] power, double grid_t0, double grid_dt,
              const double[::1] eparams, const double[::1] sparams, const double[::1] solo_cdf,
              long long[::1] obj_ids, int[::1] obj_masks, long long[::1] scene_state,
              double[::1] avail, unsigned char[::1] powered, long long[::1] downtime,
              double[::1] harvested, double[::1] consumed, double[::1] spilled,
              long long[::1] raw_tx, object scene_rng, object detect_rng):
    cdef bitgen_t* sg = _bitgen(scene_rng)
    cdef bitgen_t* dg = _bitgen(detect_rng)
    cdef int n_cam = avail.shape[0]
    cdef long n_grid = power.shape[1]
    cdef double e_op = eparams[E_OP]
    cdef double e_max = eparams[E_MAX]
    cdef double restart = eparams[RESTART]
    cdef double raw_cost = eparams[F_RAW] * e_tr
    cdef double local_cost = eparams[E_DET] + eparams[F_PROC] * e_tr
    cdef double p_cloud = sparams[P_CLOUD]
    cdef double p_local = sparams[P_LOCAL]
    cdef double t, x, frac, h, c, level, p, recall_sum = 0.0
    cdef long gi, n, i, count
    cdef long pre_guard = 0, guard = 0
    cdef int f, k, m, bit, is_guard
    cdef int active[64]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] hit_arr = np.zeros(obj_ids.shape[0], dtype=np.uint8)
    cdef unsigned char[::1] hit = hit_arr
    if n_cam > 64:
        raise ValueError("at most 64 cameras")

    if gap > 0.0:
        _advance(gap, dt, sparams, solo_cdf, n_cam, obj_ids, obj_masks, scene_state, sg)

    for f in range(n_frames):
        is_guard = f == n_frames - 1
        _advance(dt, dt, sparams, solo_cdf, n_cam, obj_ids, obj_masks, scene_state, sg)
        t = t0 + f * dt
        x = (t - grid_t0) / grid_dt
        if x <= 0.0:
            gi = 0
            frac = 0.0
        elif x >= n_grid - 1:
            gi = n_grid - 2
            frac = 1.0
        else:
            gi = <long> x
            frac = x - gi
        for k in range(n_cam):
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

        n = <long> scene_state[0]
        for i in range(n):
            hit[i] = 0
        for k in range(n_cam):
            if active[k] == 0:
                continue
            p = p_cloud if active[k] == 1 else p_local
            bit = 1 << k
            for i in range(n):
                if obj_masks[i] & bit:
                    if _u(dg) < p:
                        hit[i] = 1
        count = 0
        for i in range(n):
            count += hit[i]
        if n == 0:
            recall_sum += 1.0
        else:
            recall_sum += <double> count / n
        if f == n_frames - 2:
            pre_guard = count
        if is_guard:
            guard = count
    return pre_guard, guard, recall_sum


# Network activations are stored feature-major: unit j of sample b lives at
# [j * bsz + b], so the innermost loops run over the batch contiguously.

cdef void _forward(const double* params, const long* sizes, long n_layers, const double* x_fm,
                   long bsz, double* acts, double* pre, const double* masks) noexcept nogil:
    """Forward pass; ``acts`` gets every layer's output (post-dropout) in
    sequence, ``pre`` the hidden pre-activations, both feature-major.
    ``masks`` is laid out like the concatenated hidden activations, or NULL."""
    cdef long l, o, j, b, n_in, n_out, off = 0, a_in = 0, a_out, p_off = 0
    cdef double wj, bo
    cdef double* out
    cdef const double* inp
    cdef const double* w
    for j in range(bsz * sizes[0]):
        acts[j] = x_fm[j]
    a_out = bsz * sizes[0]
    for l in range(n_layers):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        w = params + off
        inp = acts + a_in
        out = acts + a_out
        for o in range(n_out):
            bo = params[off + n_in * n_out + o]
            for b in range(bsz):
                out[o * bsz + b] = bo
            for j in range(n_in):
                wj = w[o * n_in + j]
                for b in range(bsz):
                    out[o * bsz + b] += wj * inp[j * bsz + b]
        if l < n_layers - 1:
            for j in range(n_out * bsz):
                pre[p_off + j] = out[j]
                if out[j] < 0.0:
                    out[j] = 0.0
            if masks != NULL:
                for j in range(n_out * bsz):
                    out[j] *= masks[p_off + j]
            p_off += bsz * n_out
        off += n_in * n_out + n_out
        a_in = a_out
        a_out += bsz * n_out


cdef long* _sizes(object sizes, long* n_layers, long* total, long* hid) except NULL:
    cdef long l
    n_layers[0] = len(sizes) - 1
    cdef long* sz = <long*> malloc((n_layers[0] + 1) * sizeof(long))
    total[0] = 0
    hid[0] = 0
    for l in range(n_layers[0] + 1):
        sz[l] = sizes[l]
        total[0] += sz[l]
        if 0 < l < n_layers[0]:
            hid[0] += sz[l]
    return sz


def mlp_forward(const double[::1] params, sizes, x):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    cdef long n_layers, total, hid, b, o, n_act
    cdef long* sz = _sizes(sizes, &n_layers, &total, &hid)
    cdef long bsz = xa.shape[0]
    if xa.shape[1] != sz[0]:
        free(sz)
        raise ValueError(f"state dimension {xa.shape[1]} does not match input layer {sizes[0]}")
    n_act = sz[n_layers]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xt = np.ascontiguousarray(xa.T)
    cdef double* acts = <double*> malloc(bsz * total * sizeof(double))
    cdef double* pre = <double*> malloc((bsz * hid + 1) * sizeof(double))
    _forward(&params[0], sz, n_layers, &xt[0, 0], bsz, acts, pre, NULL)
    out = np.empty((bsz, n_act), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double* q = acts + bsz * (total - n_act)
    for b in range(bsz):
        for o in range(n_act):
            ov[b, o] = q[o * bsz + b]
    free(acts)
    free(pre)
    free(sz)
    return out


def dqn_train_step(double[::1] online, double[::1] target, double[::1] adam_m, double[::1] adam_v,
                   long long[::1] adam_t, sizes, const double[:, ::1] states,
                   const long long[::1] actions, const double[::1] rewards,
                   const double[:, ::1] next_states, const double[::1] terminal,
                   long size, long batch, double gamma, double lr, double beta1, double beta2,
                   double eps, double dropout, double tau, object rng):
    cdef bitgen_t* g = _bitgen(rng)
    cdef long n_layers, total, hid
    cdef long* sz = _sizes(sizes, &n_layers, &total, &hid)
    cdef long n_params = online.shape[0]
    cdef long l, i, j, b, o, k, n_in, n_out, widest = 0, a_idx
    cdef long n_state = sz[0]
    cdef long n_act = sz[n_layers]
    for l in range(n_layers + 1):
        if sz[l] > widest:
            widest = sz[l]
    cdef long* idx = <long*> malloc(batch * sizeof(long))
    cdef double* x = <double*> malloc(batch * n_state * sizeof(double))
    cdef double* x2 = <double*> malloc(batch * n_state * sizeof(double))
    cdef double* y = <double*> malloc(batch * sizeof(double))
    cdef double* mask_rows = <double*> malloc((batch * hid + 1) * sizeof(double))
    cdef double* masks = <double*> malloc((batch * hid + 1) * sizeof(double))
    cdef double* acts = <double*> malloc(batch * total * sizeof(double))
    cdef double* pre = <double*> malloc((batch * hid + 1) * sizeof(double))
    cdef double* dz = <double*> malloc(batch * widest * sizeof(double))
    cdef double* da = <double*> malloc(batch * widest * sizeof(double))
    cdef double* grad = <double*> malloc(n_params * sizeof(double))
    cdef long* act_off = <long*> malloc((n_layers + 1) * sizeof(long))
    cdef long* pre_off = <long*> malloc((n_layers + 1) * sizeof(long))
    cdef long* par_off = <long*> malloc((n_layers + 1) * sizeof(long))
    cdef double best, diff, loss = 0.0, mean_q = 0.0, s0, s1, s2, s3, wv, keep_scale, mh, vh, b1t, b2t
    cdef double* tmp
    cdef const double* mask_ptr = NULL
    cdef int dup
    cdef long m_off, h_off

    # replay indices, without replacement
    for i in range(batch):
        while True:
            j = <long> (_u(g) * size)
            if j >= size:
                j = size - 1
            dup = 0
            for k in range(i):
                if idx[k] == j:
                    dup = 1
                    break
            if not dup:
                break
        idx[i] = j

    # masks are drawn sample-major (as the reference does) then transposed
    if dropout > 0.0:
        keep_scale = 1.0 / (1.0 - dropout)
        for i in range(batch * hid):
            mask_rows[i] = keep_scale if _u(g) >= dropout else 0.0
        m_off = 0
        h_off = 0
        for l in range(1, n_layers):
            for j in range(sz[l]):
                for b in range(batch):
                    masks[m_off + j * batch + b] = mask_rows[b * hid + h_off + j]
            m_off += batch * sz[l]
            h_off += sz[l]
        mask_ptr = masks

    for b in range(batch):
        for j in range(n_state):
            x[j * batch + b] = states[idx[b], j]
            x2[j * batch + b] = next_states[idx[b], j]

    _forward(&target[0], sz, n_layers, x2, batch, acts, pre, NULL)
    k = batch * (total - n_act)
    for b in range(batch):
        best = acts[k + b]
        for o in range(1, n_act):
            if acts[k + o * batch + b] > best:
                best = acts[k + o * batch + b]
        y[b] = rewards[idx[b]] + gamma * (1.0 - terminal[idx[b]]) * best

    _forward(&online[0], sz, n_layers, x, batch, acts, pre, mask_ptr)

    act_off[0] = 0
    pre_off[0] = 0
    par_off[0] = 0
    for l in range(n_layers):
        act_off[l + 1] = act_off[l] + batch * sz[l]
        pre_off[l + 1] = pre_off[l] + (batch * sz[l + 1] if l < n_layers - 1 else 0)
        par_off[l + 1] = par_off[l] + sz[l] * sz[l + 1] + sz[l + 1]

    k = act_off[n_layers]
    for i in range(batch * n_act):
        dz[i] = 0.0
    for b in range(batch):
        a_idx = actions[idx[b]]
        s0 = acts[k + a_idx * batch + b]
        diff = s0 - y[b]
        loss += diff * diff
        mean_q += s0
        dz[a_idx * batch + b] = 2.0 * diff / batch
    loss /= batch
    mean_q /= batch

    for l in range(n_layers - 1, -1, -1):
        n_in = sz[l]
        n_out = sz[l + 1]
        for o in range(n_out):
            s0 = 0.0
            for b in range(batch):
                s0 += dz[o * batch + b]
            grad[par_off[l] + n_in * n_out + o] = s0
            for j in range(n_in):
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                s3 = 0.0
                b = 0
                while b + 3 < batch:
                    s0 += dz[o * batch + b] * acts[act_off[l] + j * batch + b]
                    s1 += dz[o * batch + b + 1] * acts[act_off[l] + j * batch + b + 1]
                    s2 += dz[o * batch + b + 2] * acts[act_off[l] + j * batch + b + 2]
                    s3 += dz[o * batch + b + 3] * acts[act_off[l] + j * batch + b + 3]
                    b += 4
                while b < batch:
                    s0 += dz[o * batch + b] * acts[act_off[l] + j * batch + b]
                    b += 1
                grad[par_off[l] + o * n_in + j] = (s0 + s1) + (s2 + s3)
        if l == 0:
            break
        for j in range(n_in):
            for b in range(batch):
                da[j * batch + b] = 0.0
            for o in range(n_out):
                wv = online[par_off[l] + o * n_in + j]
                for b in range(batch):
                    da[j * batch + b] += dz[o * batch + b] * wv
            for b in range(batch):
                if pre[pre_off[l - 1] + j * batch + b] <= 0.0:
                    da[j * batch + b] = 0.0
                elif mask_ptr != NULL:
                    da[j * batch + b] *= masks[pre_off[l - 1] + j * batch + b]
        tmp = dz
        dz = da
        da = tmp

    adam_t[0] += 1
    b1t = 1.0 - pow(beta1, <double> adam_t[0])
    b2t = 1.0 - pow(beta2, <double> adam_t[0])
    for i in range(n_params):
        adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * grad[i]
        adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * grad[i] * grad[i]
        mh = adam_m[i] / b1t
        vh = adam_v[i] / b2t
        online[i] -= lr * mh / (sqrt(vh) + eps)
        target[i] = tau * online[i] + (1.0 - tau) * target[i]

    free(sz); free(idx); free(x); free(x2); free(y); free(mask_rows); free(masks); free(acts)
    free(pre); free(dz); free(da); free(grad); free(act_off); free(pre_off); free(par_off)
    return loss, mean_q
