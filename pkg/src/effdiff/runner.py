"""Batched Monte Carlo driver with reproducible parallelism.

Replicas are partitioned into fixed-size batches.  Replica j always
draws from its own counter-derived stream (see
sampling.replica_generator), batches are scheduled on a thread pool,
and partial sums are reduced in batch-index order, so results are
byte-identical for any worker count -- including workers=1.

Trajectories advance through pre-planned blocks whose boundaries are
aligned with the requested snapshot times; within a block the noise
increments are drawn in bulk, correlated with the appropriate
covariance factor, and handed to the compiled kernel.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .estimators import EstimatorSeries, aggregate_from_sums
from .gridcv import interpolate, interpolate_gle
from .integrators import gle_drift, noise_pair_covariance
from .sampling import (replica_generator, sample_gle_aux, sample_momenta,
                       sample_positions)

BLOCK_STEPS = 32768
DEFAULT_BATCH = 64

DYNAMICS = ("langevin-1d", "langevin-2d", "gle")


@dataclass
class CellResult:
    """Outcome of one Monte Carlo cell (fixed parameters, J replicas)."""

    series: EstimatorSeries
    n_replicas: int
    n_failed: int
    failures: list = field(default_factory=list)  # (replica index, step)
    d_psi: float = 0.0
    sum_p_sq: float = 0.0
    sum_z_sq: float = 0.0
    n_moment_samples: int = 0

    @property
    def var_p(self):
        """Time-and-ensemble second moment of momentum."""
        return self.sum_p_sq / self.n_moment_samples

    @property
    def var_z(self):
        return self.sum_z_sq / self.n_moment_samples


def resolve_workers(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("EFFDIFF_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def snapshot_steps(t_final, dt, snapshot_times=()):
    """Map requested times onto integer step indices.

    The final time is always included.  Times are matched to the
    nearest step; anything that rounds to step 0 or beyond the final
    step is rejected.
    """
    n_steps = int(round(t_final / dt))
    if n_steps < 1:
        raise ValueError("t_final must cover at least one step")
    steps = set()
    for t in snapshot_times:
        s = int(round(t / dt))
        if s < 1 or s > n_steps:
            raise ValueError(
                "snapshot time %g outside (0, %g]" % (t, n_steps * dt))
        steps.add(s)
    steps.add(n_steps)
    return n_steps, np.array(sorted(steps), dtype=np.int64)


def plan_blocks(n_steps, snap_steps, cap=BLOCK_STEPS):
    """Split [0, n_steps) into blocks ending on snapshot boundaries.

    Returns a list of (block_length, snapshot_index) where the index
    is -1 for interior blocks.
    """
    blocks = []
    prev = 0
    for k, s in enumerate(snap_steps):
        seg = int(s) - prev
        while seg > cap:
            blocks.append((cap, -1))
            seg -= cap
        blocks.append((seg, k))
        prev = int(s)
    return blocks


def _pick_backend(backend):
    if backend is None:
        return "numba" if _kernels.HAVE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError("backend must be 'numba' or 'numpy'")
    if backend == "numba" and not _kernels.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is missing")
    return backend


def _draw_langevin_noise(rng, n, tmat, dim):
    """Correlated (damping, Wiener) increments for n steps."""
    t00, t01, t10, t11 = tmat[0, 0], tmat[0, 1], tmat[1, 0], tmat[1, 1]
    if dim == 1:
        zm = rng.standard_normal((n, 2))
        g = t00 * zm[:, 0] + t01 * zm[:, 1]
        w = t10 * zm[:, 0] + t11 * zm[:, 1]
    else:
        zm = rng.standard_normal((n, dim, 2))
        g = t00 * zm[:, :, 0] + t01 * zm[:, :, 1]
        w = t10 * zm[:, :, 0] + t11 * zm[:, :, 1]
    return g, w


def _draw_gle_noise(rng, n, chol):
    zm = rng.standard_normal((n, 3))
    noise_p = chol[0, 0] * zm[:, 0]
    noise_z = chol[1, 0] * zm[:, 0] + chol[1, 1] * zm[:, 1]
    dw = chol[2, 0] * zm[:, 0] + chol[2, 1] * zm[:, 1] + chol[2, 2] * zm[:, 2]
    return noise_p, noise_z, dw


def run_cell(pot, *, dynamics="langevin-1d", beta=1.0, gamma=1.0, nu=2.0,
             dt=1e-2, t_final=100.0, snapshot_times=(), n_replicas=1000,
             master_seed=0, grid=None, gle_cv=None, direction=0,
             batch_size=DEFAULT_BATCH, workers=None, backend=None):
    """Estimate the effective diffusion coefficient at one parameter point.

    Parameters
    ----------
    pot : Potential
        Confining potential; its dimension must match the dynamics.
    dynamics : str
        One of "langevin-1d", "langevin-2d", "gle".
    grid : GridCV, optional
        Control variate for the Langevin dynamics.  When omitted the
        raw estimator is reported in both the u and v columns.
    gle_cv : GLECV, optional
        Control variate for the quasi-Markovian dynamics.
    direction : int
        Lattice direction probed by the 2D estimator (0 or 1).
    backend : str, optional
        Force "numba" or "numpy"; default picks numba when available.

    Returns
    -------
    CellResult
    """
    if dynamics not in DYNAMICS:
        raise ValueError("unknown dynamics %r" % (dynamics,))
    dim = 2 if dynamics == "langevin-2d" else 1
    if pot.dim != dim:
        raise ValueError("potential is %dD but dynamics needs %dD"
                         % (pot.dim, dim))
    if direction not in range(dim):
        raise ValueError("direction %d out of range for %dD dynamics"
                         % (direction, dim))
    if n_replicas < 2:
        raise ValueError("need at least two replicas")
    backend = _pick_backend(backend)

    n_steps, snap_steps = snapshot_steps(t_final, dt, snapshot_times)
    blocks = plan_blocks(n_steps, snap_steps)
    times = snap_steps * dt
    n_snap = len(snap_steps)

    if dynamics == "gle":
        if gamma <= 0 or nu <= 0:
            raise ValueError("gle dynamics needs gamma > 0 and nu > 0")
        drift = gle_drift(gamma, nu, beta, dt)
        cv = gle_cv
        d_psi = cv.d_psi if cv is not None else 0.0
        xi_amp = np.sqrt(2.0 / beta) / nu
    else:
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        cov = noise_pair_covariance(gamma, dt)
        tmat = cov.transform()
        decay = np.exp(-gamma * dt)
        amp = np.sqrt(2.0 * gamma / beta)
        xi_amp = amp
        cv = grid
        d_psi = cv.d_psi if cv is not None else 0.0
        if cv is not None and abs(cv.beta - beta) > 1e-12:
            raise ValueError("control variate was tabulated at beta=%g"
                             % cv.beta)

    use_cv = 1 if cv is not None else 0
    if dynamics == "gle":
        dz_table = cv.dzpsi if use_cv else np.zeros((1, 2, 2))
        lp = cv.lp if use_cv else 1.0
        lz = cv.lz if use_cv else 1.0
    else:
        dpsi_table = cv.dpsi if use_cv else np.zeros((1, 2))
        lp = cv.lp if use_cv else 1.0

    n_batches = (n_replicas + batch_size - 1) // batch_size

    # diverging replicas overflow before the finiteness check flags
    # them; that path is deliberate, so keep numpy quiet about it
    @np.errstate(over="ignore", invalid="ignore")
    def run_batch(b):
        j_lo = b * batch_size
        j_hi = min(j_lo + batch_size, n_replicas)
        jb = j_hi - j_lo
        acc = np.zeros(2)
        fail_step = np.full(jb, -1, dtype=np.int64)

        if dynamics == "langevin-2d":
            snap_state = np.empty((n_snap, jb, 5))
            q0 = np.empty((jb, 2))
        elif dynamics == "gle":
            snap_state = np.empty((n_snap, jb, 4))
            q0 = np.empty(jb)
        else:
            snap_state = np.empty((n_snap, jb, 3))
            q0 = np.empty(jb)
        p0 = np.empty_like(q0)
        z0 = np.empty(jb) if dynamics == "gle" else None

        if backend == "numba":
            for r in range(jb):
                rng = replica_generator(master_seed, j_lo + r)
                qi = sample_positions(pot, beta, rng, 1)[0]
                pi = sample_momenta(beta, rng, 1, dim)[0]
                q0[r] = qi
                p0[r] = pi
                if dynamics == "gle":
                    zi = sample_gle_aux(beta, rng, 1)[0]
                    z0[r] = zi
                    state = np.array([qi, pi, zi, 0.0])
                elif dynamics == "langevin-2d":
                    state = np.array([qi[0], qi[1], pi[0], pi[1], 0.0])
                else:
                    state = np.array([qi, pi, 0.0])
                alive = True
                done = 0
                for blk_len, snap_idx in blocks:
                    if alive:
                        if dynamics == "gle":
                            npn, nzn, dw = _draw_gle_noise(
                                rng, blk_len, drift.chol)
                            rc = _kernels.gle1d_block(
                                state, npn, nzn, dw, dt,
                                drift.propagator[0, 0], drift.propagator[0, 1],
                                drift.propagator[1, 0], drift.propagator[1, 1],
                                xi_amp, pot.force_id, pot.param,
                                use_cv, dz_table, lp, lz, acc)
                        elif dynamics == "langevin-2d":
                            g, w = _draw_langevin_noise(rng, blk_len, tmat, 2)
                            rc = _kernels.lan2d_block(
                                state, g, w, dt, decay, amp, xi_amp,
                                pot.force_id, pot.param, use_cv, direction,
                                dpsi_table, lp, acc)
                        else:
                            g, w = _draw_langevin_noise(rng, blk_len, tmat, 1)
                            rc = _kernels.lan1d_block(
                                state, g, w, dt, decay, amp, xi_amp,
                                pot.force_id, pot.param, use_cv,
                                dpsi_table, lp, acc)
                        if rc >= 0:
                            alive = False
                            fail_step[r] = done + rc
                    done += blk_len
                    if snap_idx >= 0:
                        snap_state[snap_idx, r] = state
        else:
            # lockstep numpy fallback
            if dynamics == "langevin-2d":
                qq1 = np.empty(jb)
                qq2 = np.empty(jb)
                pp1 = np.empty(jb)
                pp2 = np.empty(jb)
            else:
                qq = np.empty(jb)
                pp = np.empty(jb)
                zz = np.empty(jb)
            ito = np.zeros(jb)
            rngs = [replica_generator(master_seed, j_lo + r)
                    for r in range(jb)]
            for r, rng in enumerate(rngs):
                qi = sample_positions(pot, beta, rng, 1)[0]
                pi = sample_momenta(beta, rng, 1, dim)[0]
                q0[r] = qi
                p0[r] = pi
                if dynamics == "langevin-2d":
                    qq1[r], qq2[r] = qi
                    pp1[r], pp2[r] = pi
                else:
                    qq[r] = qi
                    pp[r] = pi
                if dynamics == "gle":
                    zz[r] = sample_gle_aux(beta, rng, 1)[0]
                    z0[r] = zz[r]
            alive = np.ones(jb, dtype=bool)
            done = 0
            for blk_len, snap_idx in blocks:
                if alive.any():
                    if dynamics == "gle":
                        npn = np.zeros((jb, blk_len))
                        nzn = np.zeros((jb, blk_len))
                        dw = np.zeros((jb, blk_len))
                        for r in range(jb):
                            if alive[r]:
                                npn[r], nzn[r], dw[r] = _draw_gle_noise(
                                    rngs[r], blk_len, drift.chol)
                        _kernels.gle1d_block_batch(
                            qq, pp, zz, ito, alive, fail_step, done,
                            npn, nzn, dw, dt,
                            drift.propagator[0, 0], drift.propagator[0, 1],
                            drift.propagator[1, 0], drift.propagator[1, 1],
                            xi_amp, pot.force_id, pot.param,
                            use_cv, dz_table, lp, lz, acc)
                    elif dynamics == "langevin-2d":
                        g = np.zeros((jb, blk_len, 2))
                        w = np.zeros((jb, blk_len, 2))
                        for r in range(jb):
                            if alive[r]:
                                g[r], w[r] = _draw_langevin_noise(
                                    rngs[r], blk_len, tmat, 2)
                        _kernels.lan2d_block_batch(
                            qq1, qq2, pp1, pp2, ito, alive, fail_step, done,
                            g, w, dt, decay, amp, xi_amp,
                            pot.force_id, pot.param, use_cv, direction,
                            dpsi_table, lp, acc)
                    else:
                        g = np.zeros((jb, blk_len))
                        w = np.zeros((jb, blk_len))
                        for r in range(jb):
                            if alive[r]:
                                g[r], w[r] = _draw_langevin_noise(
                                    rngs[r], blk_len, tmat, 1)
                        _kernels.lan1d_block_batch(
                            qq, pp, ito, alive, fail_step, done, g, w,
                            dt, decay, amp, xi_amp, pot.force_id, pot.param,
                            use_cv, dpsi_table, lp, acc)
                done += blk_len
                if snap_idx >= 0:
                    if dynamics == "langevin-2d":
                        snap_state[snap_idx, :, 0] = qq1
                        snap_state[snap_idx, :, 1] = qq2
                        snap_state[snap_idx, :, 2] = pp1
                        snap_state[snap_idx, :, 3] = pp2
                        snap_state[snap_idx, :, 4] = ito
                    elif dynamics == "gle":
                        snap_state[snap_idx, :, 0] = qq
                        snap_state[snap_idx, :, 1] = pp
                        snap_state[snap_idx, :, 2] = zz
                        snap_state[snap_idx, :, 3] = ito
                    else:
                        snap_state[snap_idx, :, 0] = qq
                        snap_state[snap_idx, :, 1] = pp
                        snap_state[snap_idx, :, 2] = ito

        ok = fail_step < 0

        # estimator values at each snapshot, per surviving replica
        if dynamics == "langevin-2d":
            q0_dir = q0[:, direction]
            qT_dir = snap_state[:, :, direction]
            pT_dir = snap_state[:, :, 2 + direction]
            ito_T = snap_state[:, :, 4]
        elif dynamics == "gle":
            q0_dir = q0
            qT_dir = snap_state[:, :, 0]
            pT_dir = snap_state[:, :, 1]
            zT = snap_state[:, :, 2]
            ito_T = snap_state[:, :, 3]
        else:
            q0_dir = q0
            qT_dir = snap_state[:, :, 0]
            pT_dir = snap_state[:, :, 1]
            ito_T = snap_state[:, :, 2]

        disp = qT_dir - q0_dir[None, :]
        tt = times[:, None]
        u = disp ** 2 / (2.0 * tt)
        if use_cv:
            if dynamics == "gle":
                psi0, _ = interpolate_gle(cv, q0, p0, z0)
                psiT = np.empty((n_snap, jb))
                for k in range(n_snap):
                    psiT[k], _ = interpolate_gle(
                        cv, qT_dir[k], pT_dir[k], zT[k])
            else:
                if dynamics == "langevin-2d":
                    psi0, _ = interpolate(cv, q0[:, direction],
                                          p0[:, direction])
                else:
                    psi0, _ = interpolate(cv, q0, p0)
                psiT = np.empty((n_snap, jb))
                for k in range(n_snap):
                    psiT[k], _ = interpolate(cv, qT_dir[k], pT_dir[k])
            xi = psi0[None, :] - psiT + ito_T
            v = u - xi ** 2 / (2.0 * tt) + d_psi
        else:
            v = u

        uo = u[:, ok]
        vo = v[:, ok]
        fails = [(j_lo + int(r), int(fail_step[r]))
                 for r in np.nonzero(~ok)[0]]
        return {
            "n_ok": int(ok.sum()),
            "fails": fails,
            "su": uo.sum(axis=1),
            "suu": (uo ** 2).sum(axis=1),
            "sv": vo.sum(axis=1),
            "svv": (vo ** 2).sum(axis=1),
            "acc": acc,
            "n_moment": int(n_steps * ok.sum()
                            + fail_step[~ok].sum()),
        }

    n_workers = resolve_workers(workers)
    if n_workers == 1 or n_batches == 1:
        parts = [run_batch(b) for b in range(n_batches)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run_batch, range(n_batches)))

    su = np.zeros(n_snap)
    suu = np.zeros(n_snap)
    sv = np.zeros(n_snap)
    svv = np.zeros(n_snap)
    acc = np.zeros(2)
    n_ok = 0
    n_moment = 0
    failures = []
    for part in parts:  # batch-index order: deterministic reduction
        su += part["su"]
        suu += part["suu"]
        sv += part["sv"]
        svv += part["svv"]
        acc += part["acc"]
        n_ok += part["n_ok"]
        n_moment += part["n_moment"]
        failures.extend(part["fails"])

    if n_ok < 2:
        raise RuntimeError(
            "only %d of %d replicas survived; cannot form an estimate"
            % (n_ok, n_replicas))
    series = aggregate_from_sums(times, n_ok, su, suu, sv, svv, d_psi)
    return CellResult(series=series, n_replicas=n_replicas,
                      n_failed=n_replicas - n_ok, failures=failures,
                      d_psi=d_psi, sum_p_sq=acc[0], sum_z_sq=acc[1],
                      n_moment_samples=n_moment)
