"""End-to-end statistical acceptance battery.

Every test here runs real Monte Carlo at a fixed seed and checks the
result against a closed-form limit, an independent quadrature, or a
self-consistency target.  The battery is deliberately heavy -- the
deep-underdamped runs dominate and the whole module takes roughly
twenty minutes on one core.  The fast per-module checks live in the
other test files; this one ties the pieces together at the parameter
points where the answers are known.
"""

import math
import os
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from effdiff.experiments import (ExperimentConfig, fit_from_summary,
                                 run_sweep)
from effdiff.gridcv import GLECV, build_grid
from effdiff.integrators import make_noise_pair, noise_pair_covariance
from effdiff.potentials import make_potential
from effdiff.runner import run_cell
from effdiff.spectral import (assemble_generator_matrix,
                              diffusion_from_spectral, make_basis,
                              solve_saddle)
from effdiff.spectral import export_to_grid as spectral_export
from effdiff.underdamped import build_profile, limiting_diffusion
from effdiff.underdamped import export_to_grid as profile_export

ZERO = make_potential("zero")
COSINE = make_potential("cosine")

_FREE_RUNS = {}


def free_run(gamma, j=5000, t=100.0):
    """Flat-landscape cell, shared between the displacement tests."""
    key = (gamma, j, t)
    if key not in _FREE_RUNS:
        _FREE_RUNS[key] = run_cell(
            ZERO, beta=1.0, gamma=gamma, dt=0.01, t_final=t,
            n_replicas=j, master_seed=101)
    return _FREE_RUNS[key]


def finite_horizon_mean(gamma, t):
    """E[u(T)] for free diffusion started from equilibrium."""
    return (1.0 / gamma) * (1.0 + math.expm1(-gamma * t) / (gamma * t))


# ---------------------------------------------------------------------------
# free diffusion against the Ornstein-Uhlenbeck displacement law
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_free_diffusion_mean_displacement(gamma):
    res = free_run(gamma)
    assert res.n_failed == 0
    s = res.series
    target = finite_horizon_mean(gamma, 100.0)
    stderr = s.std_u[-1] / math.sqrt(s.n_replicas)
    assert abs(s.mean_u[-1] - target) <= 3.0 * stderr
    # at T = 100 the finite-horizon transient is already inside 2%;
    # gamma = 0.5 sits exactly on the bound, so allow for rounding
    d = 1.0 / gamma
    assert abs(target - d) <= 0.02 * d + 1e-12


def test_free_diffusion_relative_spread_is_sqrt_two():
    s = free_run(1.0).series
    ratio = s.std_u[-1] / 1.0  # D = 1/(gamma beta) = 1
    assert 1.27 <= ratio <= 1.56


# ---------------------------------------------------------------------------
# exact control variate on the flat landscape
# ---------------------------------------------------------------------------

def exact_free_cv(gamma):
    # psi = p/gamma solves the flat-landscape problem exactly, and a
    # bilinear table reproduces a function linear in p without error
    return build_grid(lambda q, p: p / gamma,
                      lambda q, p: np.ones_like(p) / gamma,
                      64, 96, 9.0, 1.0, gamma, ZERO, "file")


def test_exact_control_variate_removes_nearly_all_variance():
    grid = exact_free_cv(1.0)
    ratio = {}
    for dt in (0.01, 0.005):
        res = run_cell(ZERO, beta=1.0, gamma=1.0, dt=dt, t_final=100.0,
                       n_replicas=5000, master_seed=303, grid=grid)
        s = res.series
        ratio[dt] = s.std_v[-1] / s.std_u[-1]
    assert ratio[0.01] <= 0.05
    # the residual spread is pure time discretization, first order in dt
    assert 0.35 <= ratio[0.005] / ratio[0.01] <= 0.65


# ---------------------------------------------------------------------------
# confined harmonic well: displacement moments have closed forms
# ---------------------------------------------------------------------------

def test_confined_well_displacement_moments():
    well = make_potential("quadratic", 1.0)
    t = 50.0
    j = 2000
    res = run_cell(well, beta=1.0, gamma=1.0, dt=0.01, t_final=t,
                   n_replicas=j, master_seed=404)
    s = res.series
    # endpoints decorrelate, so q_T - q_0 is N(0, 2/(k beta)) and
    # T u(T) has mean 1/(k beta) and variance 2/(k beta)^2
    scaled_mean = t * s.mean_u[-1]
    stderr = t * s.std_u[-1] / math.sqrt(j)
    assert abs(scaled_mean - 1.0) <= 3.0 * stderr
    scaled_var = (t * s.std_u[-1]) ** 2
    assert 1.6 <= scaled_var <= 2.4


# ---------------------------------------------------------------------------
# spectral solution: self-convergence and agreement with Monte Carlo
# ---------------------------------------------------------------------------

def galerkin_solution(n):
    basis = make_basis(n, 1.0, 1.0)
    amat = assemble_generator_matrix(basis, COSINE)
    return solve_saddle(amat, basis, COSINE)


def test_spectral_diffusion_self_converges_and_mc_covers_it():
    sol30 = galerkin_solution(30)
    sol60 = galerkin_solution(60)
    d30 = diffusion_from_spectral(sol30)
    d60 = diffusion_from_spectral(sol60)
    assert abs(d30 - d60) <= 1e-3 * abs(d60)

    grid = spectral_export(sol60, COSINE, 128, 192, 9.0)
    j = 2000
    res = run_cell(COSINE, beta=1.0, gamma=1.0, dt=0.01, t_final=100.0,
                   n_replicas=j, master_seed=505, grid=grid)
    s = res.series
    se = s.std_v[-1] / math.sqrt(j)
    assert abs(s.mean_v[-1] - d60) <= 3.0 * se
    assert s.std_v[-1] <= s.std_u[-1] / 3.0


# ---------------------------------------------------------------------------
# energy-profile control variate deep in the small-friction regime
# ---------------------------------------------------------------------------

def underdamped_grid(gamma):
    profile = build_profile(COSINE, COSINE.vmax + 100.0)
    return profile, profile_export(profile, gamma, 128, 192, 9.0, 1.0)


def test_energy_profile_cv_tenfold_variance_cut():
    gamma = 1e-3
    _, grid = underdamped_grid(gamma)
    res = run_cell(COSINE, beta=1.0, gamma=gamma, dt=0.01,
                   t_final=100.0 / gamma, n_replicas=1000, master_seed=42,
                   grid=grid)
    assert res.n_failed == 0
    s = res.series
    assert (s.std_v[-1] / s.std_u[-1]) ** 2 <= 0.1


def test_small_friction_estimate_matches_quadrature_limit():
    gamma = 1e-4
    profile, grid = underdamped_grid(gamma)
    res = run_cell(COSINE, beta=1.0, gamma=gamma, dt=0.01,
                   t_final=20.0 / gamma, n_replicas=160, master_seed=77,
                   grid=grid)
    target = gamma * res.d_psi  # quadrature value of the asymptotic mean
    found = gamma * res.series.mean_v[-1]
    assert abs(found - target) <= 0.10 * target
    # the tabulated quadrature itself sits on the analytic limit
    limit = limiting_diffusion(profile, 1.0)
    assert abs(target - limit) <= 0.02 * limit


# ---------------------------------------------------------------------------
# one-step noise pair
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("gamma,dt", [(1.0, 0.01), (0.01, 0.01)])
def test_noise_pair_sample_covariance_matches_formula(gamma, dt):
    n = 10 ** 6
    cov = noise_pair_covariance(gamma, dt)
    g, w = make_noise_pair(cov, np.random.default_rng(808), n)
    want = cov.matrix
    pair = np.stack([g, w])
    got = pair @ pair.T / n
    for i in range(2):
        for j in range(2):
            stderr = math.sqrt((want[i, i] * want[j, j]
                                + want[i, j] ** 2) / n)
            assert abs(got[i, j] - want[i, j]) <= 4.0 * stderr


# ---------------------------------------------------------------------------
# coupled lattice: symmetry, the separable limit, and the scaling trend
# ---------------------------------------------------------------------------

def lattice_run(delta, direction, seed, gamma=0.5, j=2000):
    pot = make_potential("cos2d", delta)
    return run_cell(pot, dynamics="langevin-2d", beta=1.0, gamma=gamma,
                    dt=0.01, t_final=200.0, n_replicas=j, master_seed=seed,
                    direction=direction)


def test_lattice_separable_limit_and_direction_symmetry():
    j = 2000
    one_d = run_cell(COSINE, beta=1.0, gamma=0.5, dt=0.01, t_final=200.0,
                     n_replicas=j, master_seed=909)
    split = lattice_run(0.0, 0, 910)
    m1, se1 = one_d.series.mean_u[-1], one_d.series.std_u[-1] / math.sqrt(j)
    m2, se2 = split.series.mean_u[-1], split.series.std_u[-1] / math.sqrt(j)
    assert abs(m1 - m2) <= 3.0 * math.hypot(se1, se2)

    # with coupling the two lattice axes stay statistically identical
    a = lattice_run(0.25, 0, 911)
    b = lattice_run(0.25, 1, 912)
    ma, sa = a.series.mean_u[-1], a.series.std_u[-1] / math.sqrt(j)
    mb, sb = b.series.mean_u[-1], b.series.std_u[-1] / math.sqrt(j)
    assert abs(ma - mb) <= 3.0 * math.hypot(sa, sb)


def test_lattice_scaling_exponent_band_and_trend(tmp_path):
    sigma_hat = {}
    for delta in (0.0, 0.25):
        cfg = replace(ExperimentConfig(), dynamics="langevin-2d",
                      potential="cos2d", param=delta,
                      gamma="0.01,0.0316,0.1,0.316,1.0",
                      t_rule="100/gamma", dt=0.01, replicas=400, seed=4242,
                      batch=64, workers=1, cutoff=1.0,
                      outdir=str(tmp_path / ("delta%g" % delta)))
        res = run_sweep(cfg)
        assert res.ok
        sigma_hat[delta] = fit_from_summary(res.summary_path).sigma_hat
    for s in sigma_hat.values():
        assert 0.0 < s <= 1.05
    # coupling slows the small-friction growth of the diffusion
    assert sigma_hat[0.0] > sigma_hat[0.25] - 0.1


# ---------------------------------------------------------------------------
# quasi-Markovian dynamics: equilibrium variances and the null variate
# ---------------------------------------------------------------------------

def test_memory_dynamics_preserves_equilibrium_variances():
    res = run_cell(COSINE, dynamics="gle", beta=1.0, gamma=0.1, nu=2.0,
                   dt=0.01, t_final=1e4, n_replicas=128, master_seed=1010)
    assert res.n_moment_samples == 128 * 10 ** 6
    assert abs(res.var_p - 1.0) <= 0.02
    assert abs(res.var_z - 1.0) <= 0.02


def test_memory_dynamics_zero_table_leaves_estimator_unchanged():
    shape = (8, 9, 9)
    null = GLECV(psi=np.zeros(shape), dzpsi=np.zeros(shape), lp=6.0, lz=6.0,
                 beta=1.0, gamma=0.1, nu=2.0, potential="cosine", d_psi=0.0)
    kw = dict(dynamics="gle", beta=1.0, gamma=0.1, nu=2.0, dt=0.01,
              t_final=100.0, n_replicas=64, master_seed=1011)
    with_null = run_cell(COSINE, gle_cv=null, **kw)
    plain = run_cell(COSINE, **kw)
    assert_allclose(with_null.series.mean_v, with_null.series.mean_u, atol=0)
    assert_allclose(with_null.series.std_v, with_null.series.std_u, atol=0)
    assert_allclose(with_null.series.mean_u, plain.series.mean_u, atol=0)


# ---------------------------------------------------------------------------
# parallel execution must not leak into the outputs
# ---------------------------------------------------------------------------

def test_worker_count_never_changes_output_bytes(tmp_path, monkeypatch):
    out = tmp_path / "out"

    def sweep_with(workers):
        monkeypatch.setenv("EFFDIFF_WORKERS", str(workers))
        cfg = replace(ExperimentConfig(), potential="cosine",
                      gamma="1.0,0.5", dt=0.01, t_final=10.0,
                      snapshots="5.0", replicas=64, batch=16, seed=99,
                      workers=0, outdir=str(out))
        res = run_sweep(cfg)
        assert res.ok
        blobs = {}
        for path in [res.summary_path] + res.series_paths:
            with open(path, "rb") as fh:
                blobs[os.path.basename(path)] = fh.read()
        return blobs

    assert sweep_with(1) == sweep_with(4)
