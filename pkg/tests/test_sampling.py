import numpy as np
from numpy.testing import assert_allclose
from scipy import special

from effdiff.potentials import make_potential
from effdiff.sampling import (
    replica_generator,
    sample_gle_aux,
    sample_momenta,
    sample_positions,
    scan_envelope,
)

N_DRAW = 200_000


def test_replica_generator_reproducible():
    a = replica_generator(1234, 7).normal(size=16)
    b = replica_generator(1234, 7).normal(size=16)
    assert_allclose(a, b, atol=0)


def test_replica_generator_streams_differ():
    a = replica_generator(1234, 0).normal(size=16)
    b = replica_generator(1234, 1).normal(size=16)
    c = replica_generator(1235, 0).normal(size=16)
    assert not np.allclose(a, b)
    assert not np.allclose(a, c)
    # the (seed, index) pair is an ordered key, not a sum
    d = replica_generator(1, 2).normal(size=16)
    e = replica_generator(2, 1).normal(size=16)
    assert not np.allclose(d, e)


def test_scan_envelope_bounds_density():
    pot = make_potential("cosine")
    beta = 1.7
    env = scan_envelope(pot, beta)
    qs = np.linspace(-np.pi, np.pi, 10_000)
    assert env >= np.exp(-beta * pot.value(qs)).max() - 1e-12


def test_positions_uniform_for_flat_potential():
    pot = make_potential("zero")
    rng = replica_generator(0, 0)
    q = sample_positions(pot, 1.0, rng, N_DRAW)
    assert q.shape == (N_DRAW,)
    assert q.min() >= -np.pi and q.max() < np.pi
    # first circular moments of the uniform law vanish
    se = 1.0 / np.sqrt(2 * N_DRAW)
    assert abs(np.mean(np.cos(q))) < 5 * se
    assert abs(np.mean(np.sin(q))) < 5 * se


def test_positions_cosine_moment():
    # nu(dq) ~ exp(beta*cos(q)/2) dq, so E[cos q] = I1(beta/2)/I0(beta/2)
    pot = make_potential("cosine")
    for beta in (1.0, 3.0):
        rng = replica_generator(11, int(beta))
        q = sample_positions(pot, beta, rng, N_DRAW)
        target = special.iv(1, beta / 2) / special.iv(0, beta / 2)
        got = np.mean(np.cos(q))
        se = np.std(np.cos(q)) / np.sqrt(N_DRAW)
        assert abs(got - target) < 5 * se


def test_positions_gaussian_for_quadratic():
    k, beta = 3.0, 2.0
    pot = make_potential("quadratic", k)
    rng = replica_generator(5, 0)
    q = sample_positions(pot, beta, rng, N_DRAW)
    var = 1.0 / (beta * k)
    assert abs(np.mean(q)) < 5 * np.sqrt(var / N_DRAW)
    assert_allclose(np.var(q), var, rtol=0.02)


def test_positions_2d_coupled():
    pot = make_potential("cos2d", 0.25)
    beta = 1.0
    rng = replica_generator(6, 0)
    q = sample_positions(pot, beta, rng, 50_000)
    assert q.shape == (50_000, 2)
    # compare E[cos q1] against a quadrature of the coupled density
    ax = np.linspace(-np.pi, np.pi, 401)
    q1, q2 = np.meshgrid(ax, ax, indexing="ij")
    w = np.exp(-beta * pot.value(np.stack([q1, q2], axis=-1)))
    target = np.sum(np.cos(q1) * w) / np.sum(w)
    se = np.std(np.cos(q[:, 0])) / np.sqrt(len(q))
    assert abs(np.mean(np.cos(q[:, 0])) - target) < 5 * se
    # symmetry of the marginals
    assert abs(np.mean(np.cos(q[:, 0])) - np.mean(np.cos(q[:, 1]))) < 8 * se


def test_momenta_and_aux_are_maxwellian():
    beta = 2.5
    rng = replica_generator(7, 0)
    p = sample_momenta(beta, rng, N_DRAW)
    assert_allclose(np.var(p), 1.0 / beta, rtol=0.02)
    p2 = sample_momenta(beta, rng, 1000, dim=2)
    assert p2.shape == (1000, 2)
    z = sample_gle_aux(beta, rng, N_DRAW)
    assert_allclose(np.var(z), 1.0 / beta, rtol=0.02)
    assert abs(np.mean(z)) < 5 / np.sqrt(beta * N_DRAW)
