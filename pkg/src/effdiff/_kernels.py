"""Inner trajectory loops.

Two interchangeable backends advance a replica through a block of
steps given pre-drawn, pre-correlated noise increments:

* scalar kernels compiled with numba (one replica per call, GIL
  released so batches run on a thread pool), and
* vectorised numpy fallbacks that advance a whole batch in lockstep
  when numba is unavailable.

Both are written as the same sequence of elementwise floating-point
operations, so for a given noise stream they produce the same
trajectories (bit-identical except for possible last-ulp differences
in the libm sin used by each backend).  Noise generation and the
2x2/3x3 covariance transforms live outside, in the runner, and are
shared by both paths.

State layout (flat float64 vectors, mutated in place):
    langevin 1d: [q, p, ito]
    langevin 2d: [q1, q2, p1, p2, ito]
    gle 1d:      [q, p, z, ito]
Positions are unwrapped; wrapping happens only inside the control-
variate lookup.  Return value is -1 on success, or the index of the
step at which the state stopped being finite.

Moment accumulators (``acc``) collect sums of p^2 (and z^2 for the
generalized dynamics) across the block; they cost two fused
multiply-adds per step and power the stationarity checks.
"""

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap

TWO_PI = 2.0 * np.pi

# potential dispatch codes (mirrors potentials.FORCE_*)
_POT_ZERO = 0
_POT_SINHALF = 1
_POT_LINEAR = 2
_POT_COS2D = 4


@njit(cache=True, nogil=True)
def _force_1d(q, pot_id, param):
    if pot_id == _POT_SINHALF:
        return 0.5 * np.sin(q)
    if pot_id == _POT_LINEAR:
        return param * q
    return 0.0


@njit(cache=True, nogil=True)
def _bilinear(arr, lp, q, p):
    """Bilinear lookup with periodic q and clamped p (scalar)."""
    nq = arr.shape[0]
    npi = arr.shape[1] - 1
    qw = (q + np.pi) % TWO_PI - np.pi
    x = (qw + np.pi) * (nq / TWO_PI)
    i0 = int(x)
    if i0 > nq - 1:
        i0 = nq - 1
    fx = x - i0
    i1 = i0 + 1
    if i1 == nq:
        i1 = 0
    y = (p + lp) * (npi / (2.0 * lp))
    j0 = int(np.floor(y))
    if j0 < 0:
        j0 = 0
    elif j0 > npi - 1:
        j0 = npi - 1
    fy = y - j0
    if fy < 0.0:
        fy = 0.0
    elif fy > 1.0:
        fy = 1.0
    return ((1.0 - fx) * ((1.0 - fy) * arr[i0, j0] + fy * arr[i0, j0 + 1])
            + fx * ((1.0 - fy) * arr[i1, j0] + fy * arr[i1, j0 + 1]))


@njit(cache=True, nogil=True)
def lan1d_block(state, g, w, dt, decay, amp, xi_amp, pot_id, param,
                use_cv, dpsi, lp, acc):
    """Kinetic Langevin, one replica, one block of len(g) steps."""
    q = state[0]
    p = state[1]
    ito = state[2]
    for m in range(g.shape[0]):
        if use_cv == 1:
            ito = ito + xi_amp * _bilinear(dpsi, lp, q, p) * w[m]
        ph = p - 0.5 * dt * _force_1d(q, pot_id, param)
        q = q + dt * ph
        pt = ph - 0.5 * dt * _force_1d(q, pot_id, param)
        p = decay * pt + amp * g[m]
        if not (np.isfinite(q) and np.isfinite(p)):
            state[0] = q
            state[1] = p
            state[2] = ito
            return m
        acc[0] += p * p
    state[0] = q
    state[1] = p
    state[2] = ito
    return -1


@njit(cache=True, nogil=True)
def lan2d_block(state, g, w, dt, decay, amp, xi_amp, pot_id, param,
                use_cv, cv_axis, dpsi, lp, acc):
    """Coupled 2D kinetic Langevin; g and w have shape (steps, 2)."""
    q1 = state[0]
    q2 = state[1]
    p1 = state[2]
    p2 = state[3]
    ito = state[4]
    for m in range(g.shape[0]):
        if use_cv == 1:
            if cv_axis == 0:
                d = _bilinear(dpsi, lp, q1, p1)
            else:
                d = _bilinear(dpsi, lp, q2, p2)
            ito = ito + xi_amp * d * w[m, cv_axis]
        if pot_id == _POT_COS2D:
            s1 = np.sin(q1)
            s2 = np.sin(q2)
            f1 = 0.5 * s1 + param * s1 * np.cos(q2)
            f2 = 0.5 * s2 + param * np.cos(q1) * s2
        else:
            f1 = 0.0
            f2 = 0.0
        ph1 = p1 - 0.5 * dt * f1
        ph2 = p2 - 0.5 * dt * f2
        q1 = q1 + dt * ph1
        q2 = q2 + dt * ph2
        if pot_id == _POT_COS2D:
            s1 = np.sin(q1)
            s2 = np.sin(q2)
            f1 = 0.5 * s1 + param * s1 * np.cos(q2)
            f2 = 0.5 * s2 + param * np.cos(q1) * s2
        else:
            f1 = 0.0
            f2 = 0.0
        pt1 = ph1 - 0.5 * dt * f1
        pt2 = ph2 - 0.5 * dt * f2
        p1 = decay * pt1 + amp * g[m, 0]
        p2 = decay * pt2 + amp * g[m, 1]
        if not (np.isfinite(q1) and np.isfinite(q2)
                and np.isfinite(p1) and np.isfinite(p2)):
            state[0] = q1
            state[1] = q2
            state[2] = p1
            state[3] = p2
            state[4] = ito
            return m
    state[0] = q1
    state[1] = q2
    state[2] = p1
    state[3] = p2
    state[4] = ito
    return -1


@njit(cache=True, nogil=True)
def _trilinear(arr, lp, lz, q, p, z):
    nq = arr.shape[0]
    npi = arr.shape[1] - 1
    nzi = arr.shape[2] - 1
    qw = (q + np.pi) % TWO_PI - np.pi
    x = (qw + np.pi) * (nq / TWO_PI)
    i0 = int(x)
    if i0 > nq - 1:
        i0 = nq - 1
    fx = x - i0
    i1 = i0 + 1
    if i1 == nq:
        i1 = 0
    y = (p + lp) * (npi / (2.0 * lp))
    j0 = int(np.floor(y))
    if j0 < 0:
        j0 = 0
    elif j0 > npi - 1:
        j0 = npi - 1
    fy = y - j0
    if fy < 0.0:
        fy = 0.0
    elif fy > 1.0:
        fy = 1.0
    u = (z + lz) * (nzi / (2.0 * lz))
    k0 = int(np.floor(u))
    if k0 < 0:
        k0 = 0
    elif k0 > nzi - 1:
        k0 = nzi - 1
    fz = u - k0
    if fz < 0.0:
        fz = 0.0
    elif fz > 1.0:
        fz = 1.0
    c00 = arr[i0, j0, k0] * (1.0 - fz) + arr[i0, j0, k0 + 1] * fz
    c01 = arr[i0, j0 + 1, k0] * (1.0 - fz) + arr[i0, j0 + 1, k0 + 1] * fz
    c10 = arr[i1, j0, k0] * (1.0 - fz) + arr[i1, j0, k0 + 1] * fz
    c11 = arr[i1, j0 + 1, k0] * (1.0 - fz) + arr[i1, j0 + 1, k0 + 1] * fz
    return ((1.0 - fx) * ((1.0 - fy) * c00 + fy * c01)
            + fx * ((1.0 - fy) * c10 + fy * c11))


@njit(cache=True, nogil=True)
def gle1d_block(state, noise_p, noise_z, dw, dt, e00, e01, e10, e11,
                xi_amp, pot_id, param, use_cv, dzpsi, lp, lz, acc):
    """Quasi-Markovian dynamics: BAB then exact joint (p, z) OU flow."""
    q = state[0]
    p = state[1]
    z = state[2]
    ito = state[3]
    for m in range(noise_p.shape[0]):
        if use_cv == 1:
            ito = ito + xi_amp * _trilinear(dzpsi, lp, lz, q, p, z) * dw[m]
        ph = p - 0.5 * dt * _force_1d(q, pot_id, param)
        q = q + dt * ph
        pt = ph - 0.5 * dt * _force_1d(q, pot_id, param)
        pn = e00 * pt + e01 * z + noise_p[m]
        z = e10 * pt + e11 * z + noise_z[m]
        p = pn
        if not (np.isfinite(q) and np.isfinite(p) and np.isfinite(z)):
            state[0] = q
            state[1] = p
            state[2] = z
            state[3] = ito
            return m
        acc[0] += p * p
        acc[1] += z * z
    state[0] = q
    state[1] = p
    state[2] = z
    state[3] = ito
    return -1


# ---------------------------------------------------------------------------
# vectorised numpy fallbacks (whole batch in lockstep)
# ---------------------------------------------------------------------------

def _bilinear_batch(arr, lp, q, p):
    nq = arr.shape[0]
    npi = arr.shape[1] - 1
    qw = (q + np.pi) % TWO_PI - np.pi
    x = (qw + np.pi) * (nq / TWO_PI)
    i0 = np.minimum(x.astype(np.int64), nq - 1)
    fx = x - i0
    i1 = (i0 + 1) % nq
    y = (p + lp) * (npi / (2.0 * lp))
    j0 = np.clip(np.floor(y).astype(np.int64), 0, npi - 1)
    fy = np.clip(y - j0, 0.0, 1.0)
    return ((1.0 - fx) * ((1.0 - fy) * arr[i0, j0] + fy * arr[i0, j0 + 1])
            + fx * ((1.0 - fy) * arr[i1, j0] + fy * arr[i1, j0 + 1]))


def _force_1d_batch(q, pot_id, param):
    if pot_id == _POT_SINHALF:
        return 0.5 * np.sin(q)
    if pot_id == _POT_LINEAR:
        return param * q
    return np.zeros_like(q)


def lan1d_block_batch(q, p, ito, alive, fail_step, step0, g, w, dt, decay,
                      amp, xi_amp, pot_id, param, use_cv, dpsi, lp, acc):
    """Numpy twin of lan1d_block over a batch; arrays are 1D over
    replicas, g and w have shape (batch, steps)."""
    for m in range(g.shape[1]):
        if use_cv == 1:
            d = _bilinear_batch(dpsi, lp, q[alive], p[alive])
            ito[alive] += xi_amp * d * w[alive, m]
        qa, pa = q[alive], p[alive]
        ph = pa - 0.5 * dt * _force_1d_batch(qa, pot_id, param)
        qn = qa + dt * ph
        pt = ph - 0.5 * dt * _force_1d_batch(qn, pot_id, param)
        pn = decay * pt + amp * g[alive, m]
        q[alive] = qn
        p[alive] = pn
        bad = ~(np.isfinite(q) & np.isfinite(p)) & alive
        if bad.any():
            fail_step[bad] = step0 + m
            alive &= ~bad
        acc[0] += (p[alive] ** 2).sum()
    return alive


def lan2d_block_batch(q1, q2, p1, p2, ito, alive, fail_step, step0, g, w,
                      dt, decay, amp, xi_amp, pot_id, param, use_cv,
                      cv_axis, dpsi, lp, acc):
    for m in range(g.shape[1]):
        if use_cv == 1:
            qa = q1[alive] if cv_axis == 0 else q2[alive]
            pa = p1[alive] if cv_axis == 0 else p2[alive]
            d = _bilinear_batch(dpsi, lp, qa, pa)
            ito[alive] += xi_amp * d * w[alive, m, cv_axis]
        a1, a2, b1, b2 = q1[alive], q2[alive], p1[alive], p2[alive]
        if pot_id == _POT_COS2D:
            s1, s2 = np.sin(a1), np.sin(a2)
            f1 = 0.5 * s1 + param * s1 * np.cos(a2)
            f2 = 0.5 * s2 + param * np.cos(a1) * s2
        else:
            f1 = np.zeros_like(a1)
            f2 = np.zeros_like(a2)
        ph1 = b1 - 0.5 * dt * f1
        ph2 = b2 - 0.5 * dt * f2
        a1 = a1 + dt * ph1
        a2 = a2 + dt * ph2
        if pot_id == _POT_COS2D:
            s1, s2 = np.sin(a1), np.sin(a2)
            f1 = 0.5 * s1 + param * s1 * np.cos(a2)
            f2 = 0.5 * s2 + param * np.cos(a1) * s2
        else:
            f1 = np.zeros_like(a1)
            f2 = np.zeros_like(a2)
        pt1 = ph1 - 0.5 * dt * f1
        pt2 = ph2 - 0.5 * dt * f2
        q1[alive] = a1
        q2[alive] = a2
        p1[alive] = decay * pt1 + amp * g[alive, m, 0]
        p2[alive] = decay * pt2 + amp * g[alive, m, 1]
        bad = ~(np.isfinite(q1) & np.isfinite(q2)
                & np.isfinite(p1) & np.isfinite(p2)) & alive
        if bad.any():
            fail_step[bad] = step0 + m
            alive &= ~bad
    return alive


def _trilinear_batch(arr, lp, lz, q, p, z):
    nq = arr.shape[0]
    npi = arr.shape[1] - 1
    nzi = arr.shape[2] - 1
    qw = (q + np.pi) % TWO_PI - np.pi
    x = (qw + np.pi) * (nq / TWO_PI)
    i0 = np.minimum(x.astype(np.int64), nq - 1)
    fx = x - i0
    i1 = (i0 + 1) % nq
    y = (p + lp) * (npi / (2.0 * lp))
    j0 = np.clip(np.floor(y).astype(np.int64), 0, npi - 1)
    fy = np.clip(y - j0, 0.0, 1.0)
    u = (z + lz) * (nzi / (2.0 * lz))
    k0 = np.clip(np.floor(u).astype(np.int64), 0, nzi - 1)
    fz = np.clip(u - k0, 0.0, 1.0)
    c00 = arr[i0, j0, k0] * (1 - fz) + arr[i0, j0, k0 + 1] * fz
    c01 = arr[i0, j0 + 1, k0] * (1 - fz) + arr[i0, j0 + 1, k0 + 1] * fz
    c10 = arr[i1, j0, k0] * (1 - fz) + arr[i1, j0, k0 + 1] * fz
    c11 = arr[i1, j0 + 1, k0] * (1 - fz) + arr[i1, j0 + 1, k0 + 1] * fz
    return ((1.0 - fx) * ((1.0 - fy) * c00 + fy * c01)
            + fx * ((1.0 - fy) * c10 + fy * c11))


def gle1d_block_batch(q, p, z, ito, alive, fail_step, step0, noise_p,
                      noise_z, dw, dt, e00, e01, e10, e11, xi_amp, pot_id,
                      param, use_cv, dzpsi, lp, lz, acc):
    for m in range(noise_p.shape[1]):
        if use_cv == 1:
            d = _trilinear_batch(dzpsi, lp, lz, q[alive], p[alive], z[alive])
            ito[alive] += xi_amp * d * dw[alive, m]
        qa, pa, za = q[alive], p[alive], z[alive]
        ph = pa - 0.5 * dt * _force_1d_batch(qa, pot_id, param)
        qn = qa + dt * ph
        pt = ph - 0.5 * dt * _force_1d_batch(qn, pot_id, param)
        pn = e00 * pt + e01 * za + noise_p[alive, m]
        zn = e10 * pt + e11 * za + noise_z[alive, m]
        q[alive] = qn
        p[alive] = pn
        z[alive] = zn
        bad = ~(np.isfinite(q) & np.isfinite(p) & np.isfinite(z)) & alive
        if bad.any():
            fail_step[bad] = step0 + m
            alive &= ~bad
        acc[0] += (p[alive] ** 2).sum()
        acc[1] += (z[alive] ** 2).sum()
    return alive
