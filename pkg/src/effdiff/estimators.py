"""Displacement and variance-reduced estimators of the effective
diffusion coefficient, plus cross-replica statistics and CSV output.

Per replica, with D the target,

    u(T) = |e.(q_T - q_0)|^2 / (2T)                   (plain MSD)
    xi_T = psi(x_0) - psi(x_T) + I_T                  (control variate)
    v(T) = u(T) - |xi_T|^2/(2T) + d[psi]              (variance-reduced)

where I_T is the Ito sum accumulated along the trajectory with the
plain Brownian increments, and d[psi] is the deterministic constant
from the control-variate grid.  Both estimators have the same large-T
mean; v concentrates when psi is close to the true solution.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import gridcv

__all__ = [
    "CI_MULTIPLIER",
    "CSV_COLUMNS",
    "ReplicaOutcome",
    "EstimatorSeries",
    "u_of_T",
    "v_of_T",
    "xi_of_path",
    "xi_accumulate",
    "xi_accumulate_gle",
    "aggregate",
    "aggregate_from_sums",
    "write_series_csv",
]

CI_MULTIPLIER = 3.0  # half-widths reported as "m +/- 3 s/sqrt(J)"

CSV_COLUMNS = [
    "time", "mean_u", "std_u", "mean_v", "std_v",
    "ci_halfwidth_u", "ci_halfwidth_v",
    "J", "gamma", "beta", "delta", "d_psi", "cv_source", "seed",
]


@dataclass
class ReplicaOutcome:
    """Final and per-snapshot raw values for one trajectory."""

    displacement: float
    xi: float
    snapshot_disp: np.ndarray
    snapshot_xi: np.ndarray


@dataclass
class EstimatorSeries:
    """Sample statistics of u(t) and v(t) across replicas."""

    times: np.ndarray
    mean_u: np.ndarray
    std_u: np.ndarray
    mean_v: np.ndarray
    std_v: np.ndarray
    ci_halfwidth_u: np.ndarray
    ci_halfwidth_v: np.ndarray
    n_replicas: int
    d_psi: float


def u_of_T(displacement, t):
    """Mean-square-displacement estimator |displacement|^2 / (2T)."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("time horizon must be positive")
    d = np.asarray(displacement, dtype=float)
    return d * d / (2.0 * np.asarray(t, dtype=float))


def v_of_T(displacement, xi, t, d_psi):
    """Variance-reduced estimator; reduces to u when the control
    variate is switched off (xi = 0, d_psi = 0)."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("time horizon must be positive")
    d = np.asarray(displacement, dtype=float)
    x = np.asarray(xi, dtype=float)
    return (d * d - x * x) / (2.0 * np.asarray(t, dtype=float)) + d_psi


def xi_of_path(psi_start, psi_end, ito_sum):
    """Assemble the control variate from its three ingredients."""
    return psi_start - psi_end + ito_sum


def xi_accumulate(state, grid, gamma, beta, w_increment):
    """Left-point Euler update of the Ito sum for kinetic Langevin.

    Must be called with the state as it was *before* the step that
    produced ``w_increment``; the gradient is looked up at that point.
    Returns the updated sum and stores it on the state.
    """
    _, dpsi = gridcv.interpolate(grid, state.q, state.p)
    state.ito = state.ito + np.sqrt(2.0 * gamma / beta) * dpsi * w_increment
    return state.ito


def xi_accumulate_gle(state, cv, beta, nu, w_increment):
    """Same update for the generalized dynamics: the noise enters
    through the auxiliary variable, so the z-derivative appears with
    amplitude sqrt(2/beta)/nu."""
    _, dzpsi = gridcv.interpolate_gle(cv, state.q, state.p, state.z)
    state.ito = state.ito + np.sqrt(2.0 / beta) / nu * dzpsi * w_increment
    return state.ito


def aggregate(outcomes, times, d_psi):
    """Cross-replica sample statistics at each snapshot time."""
    if len(outcomes) < 2:
        raise ValueError("need at least two replicas for sample statistics")
    times = np.asarray(times, dtype=float)
    disp = np.stack([o.snapshot_disp for o in outcomes])
    xi = np.stack([o.snapshot_xi for o in outcomes])
    u = disp**2 / (2.0 * times)
    v = u - xi**2 / (2.0 * times) + d_psi
    j = len(outcomes)
    return EstimatorSeries(
        times=times,
        mean_u=u.mean(axis=0), std_u=u.std(axis=0, ddof=1),
        mean_v=v.mean(axis=0), std_v=v.std(axis=0, ddof=1),
        ci_halfwidth_u=CI_MULTIPLIER * u.std(axis=0, ddof=1) / np.sqrt(j),
        ci_halfwidth_v=CI_MULTIPLIER * v.std(axis=0, ddof=1) / np.sqrt(j),
        n_replicas=j, d_psi=float(d_psi))


def aggregate_from_sums(times, n, su, suu, sv, svv, d_psi):
    """Statistics from streaming sums (the parallel runner's path).

    The sums must have been reduced in a fixed order for bit-exact
    reproducibility; this function is deterministic given its inputs.
    """
    if n < 2:
        raise ValueError("need at least two replicas for sample statistics")
    times = np.asarray(times, dtype=float)
    mean_u = su / n
    mean_v = sv / n
    var_u = np.maximum(suu - su * su / n, 0.0) / (n - 1)
    var_v = np.maximum(svv - sv * sv / n, 0.0) / (n - 1)
    std_u, std_v = np.sqrt(var_u), np.sqrt(var_v)
    return EstimatorSeries(
        times=times, mean_u=mean_u, std_u=std_u, mean_v=mean_v, std_v=std_v,
        ci_halfwidth_u=CI_MULTIPLIER * std_u / np.sqrt(n),
        ci_halfwidth_v=CI_MULTIPLIER * std_v / np.sqrt(n),
        n_replicas=n, d_psi=float(d_psi))


def write_series_csv(path, series, gamma, beta, delta, cv_source, seed,
                     header_meta=None):
    """Write one estimator series in the standard column layout.

    ``header_meta`` entries become sorted '# key=value' comment lines,
    so every file carries its full configuration; no timestamps, so
    identical runs produce identical bytes.
    """
    with open(path, "w", newline="") as fh:
        for key in sorted(header_meta or {}):
            fh.write(f"# {key}={header_meta[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i, t in enumerate(series.times):
            writer.writerow([
                repr(float(t)),
                repr(float(series.mean_u[i])), repr(float(series.std_u[i])),
                repr(float(series.mean_v[i])), repr(float(series.std_v[i])),
                repr(float(series.ci_halfwidth_u[i])),
                repr(float(series.ci_halfwidth_v[i])),
                series.n_replicas, repr(float(gamma)), repr(float(beta)),
                repr(float(delta)), repr(float(series.d_psi)),
                cv_source, seed,
            ])
