import numpy as np
from numpy.testing import assert_allclose

from effdiff.torus import wrap_angle, periodic_distance


def test_wrap_angle_range():
    rng = np.random.default_rng(0)
    q = rng.uniform(-50.0, 50.0, size=10_000)
    w = wrap_angle(q)
    assert np.all(w >= -np.pi)
    assert np.all(w < np.pi)


def test_wrap_angle_is_identity_on_fundamental_domain():
    q = np.linspace(-np.pi, np.pi, 1000, endpoint=False)
    assert_allclose(wrap_angle(q), q, rtol=0, atol=1e-15)


def test_wrap_angle_periodicity():
    rng = np.random.default_rng(1)
    q = rng.uniform(-np.pi, np.pi, size=500)
    for shift in (-3, -1, 1, 2, 7):
        assert_allclose(wrap_angle(q + 2 * np.pi * shift), q, atol=1e-12)


def test_wrap_angle_boundary():
    # pi itself belongs to the next cell and must come back as -pi
    assert wrap_angle(np.pi) == -np.pi
    assert wrap_angle(-np.pi) == -np.pi
    assert wrap_angle(3 * np.pi) == -np.pi


def test_wrap_angle_scalar_and_shape():
    assert np.shape(wrap_angle(0.3)) == ()
    assert wrap_angle(np.zeros((4, 2))).shape == (4, 2)


def test_periodic_distance_signed_shortest():
    # going from 3 to -3 the short way crosses the seam
    d = periodic_distance(-3.0, 3.0)
    assert_allclose(d, 2 * np.pi - 6.0, atol=1e-15)
    assert_allclose(periodic_distance(3.0, -3.0), -(2 * np.pi - 6.0), atol=1e-15)


def test_periodic_distance_antisymmetric_mod_2pi():
    rng = np.random.default_rng(2)
    a = rng.uniform(-np.pi, np.pi, size=300)
    b = rng.uniform(-np.pi, np.pi, size=300)
    s = periodic_distance(a, b) + periodic_distance(b, a)
    # sum is 0 or +-2*pi at the seam
    assert np.all(np.isclose(s, 0.0) | np.isclose(np.abs(s), 2 * np.pi))
