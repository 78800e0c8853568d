"""Time-stepping schemes for the kinetic Langevin and quasi-Markovian
generalized Langevin dynamics.

The kinetic Langevin scheme is a splitting of the form

    B: half kick        p <- p - (dt/2) * grad V(q)
    A: drift            q <- q + dt * p
    B: half kick        p <- p - (dt/2) * grad V(q)
    O: exact OU flow    p <- exp(-gamma*dt) * p + sqrt(2*gamma/beta) * g

where ``g`` is the exactly-integrated OU noise.  Because the control
variate needs the plain Brownian increment over the same window, the
pair ``(g, w)`` is drawn jointly with its exact 2x2 covariance.

The generalized Langevin scheme replaces the O part by the exact flow
of the coupled (p, z) Ornstein-Uhlenbeck block; its Gaussian update is
drawn jointly with the Brownian increment as well (3x3 covariance).

These are reference, array-vectorised implementations.  The batched
compiled kernels in ``_kernels`` reproduce the same arithmetic.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

__all__ = [
    "NoisePairCovariance",
    "noise_pair_covariance",
    "make_noise_pair",
    "gla_step",
    "GLEDrift",
    "gle_drift",
    "babo_step",
    "ReplicaState",
]


# ---------------------------------------------------------------------------
# kinetic Langevin: correlated (OU noise, Brownian increment) pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePairCovariance:
    """Covariance of (g, w): the exact OU noise over one step and the
    underlying Brownian increment.

    With x = gamma*dt,

        Var[g]    = (1 - exp(-2x)) / (2*gamma)
        Cov[g, w] = (1 - exp(-x)) / gamma
        Var[w]    = dt

    and the gamma -> 0 limit g = w is taken continuously.
    """

    gamma: float
    dt: float
    s11: float
    s12: float
    s22: float
    det: float

    @property
    def matrix(self):
        return np.array([[self.s11, self.s12], [self.s12, self.s22]])

    def transform(self):
        """Symmetric square root T of the covariance, so that
        (g, w) = T @ (iid standard normals)."""
        root_det = np.sqrt(self.det)
        tau = self.s11 + self.s22 + 2.0 * root_det
        m = self.matrix
        m[0, 0] += root_det
        m[1, 1] += root_det
        return m / np.sqrt(tau)


def noise_pair_covariance(gamma, dt):
    """Exact covariance of the correlated noise pair for one step."""
    gamma, dt = float(gamma), float(dt)
    if gamma < 0.0 or dt <= 0.0:
        raise ValueError("need gamma >= 0 and dt > 0")
    if gamma == 0.0:
        return NoisePairCovariance(gamma, dt, dt, dt, dt, 0.0)
    x = gamma * dt
    u = -np.expm1(-x)  # 1 - exp(-x), accurate for small x
    s11 = u * (2.0 - u) / (2.0 * gamma)  # (1 - exp(-2x)) / (2 gamma)
    s12 = u / gamma
    s22 = dt
    # det = s11*s22 - s12^2 cancels badly for small x: factor it as
    # (u/gamma^2) * g(x) with g = x - u - x*u/2 and switch to the series
    # g = x^3/12 - x^4/24 + x^5/80 - ... once floating-point cancellation
    # in g would dominate the cubic leading term.
    if x < 1e-3:
        g = x**3 * (1.0 / 12.0 + x * (-1.0 / 24.0 + x / 80.0))
    else:
        g = (x + np.expm1(-x)) - 0.5 * x * u
    det = u * g / gamma**2
    return NoisePairCovariance(gamma, dt, s11, s12, s22, max(det, 0.0))


def make_noise_pair(cov, rng, size):
    """Draw correlated (g, w) with the given covariance.

    Returns two arrays of shape ``size``.
    """
    t = cov.transform()
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    g = t[0, 0] * z1 + t[0, 1] * z2
    w = t[1, 0] * z1 + t[1, 1] * z2
    return g, w


def gla_step(q, p, dt, gamma, beta, grad, g):
    """One BAB + exact-OU step of kinetic Langevin dynamics.

    ``grad`` maps positions to the potential gradient; ``g`` is the OU
    noise component of a correlated pair from :func:`make_noise_pair`.
    Positions are left unwrapped so displacements accumulate.
    """
    p_half = p - 0.5 * dt * grad(q)
    q_new = q + dt * p_half
    p_tilde = p_half - 0.5 * dt * grad(q_new)
    p_new = np.exp(-gamma * dt) * p_tilde + np.sqrt(2.0 * gamma / beta) * g
    return q_new, p_new


# ---------------------------------------------------------------------------
# generalized Langevin (quasi-Markovian, one auxiliary variable)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GLEDrift:
    """Precomputed exact flow of the (p, z) block over one step.

    The linear SDE is

        d(p, z) = M (p, z) dt + c dW,
        M = [[0, sqrt(gamma)/nu], [-sqrt(gamma)/nu, -1/nu^2]],
        c = (0, sqrt(2/(beta*nu^2))).

    ``propagator`` is exp(M*dt); ``chol`` is a lower-triangular factor
    of the joint covariance of (noise_p, noise_z, dW).
    """

    gamma: float
    nu: float
    beta: float
    dt: float
    propagator: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    cross: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)

    def draw(self, rng, size):
        """Sample (noise_p, noise_z, dW), each of shape ``size``."""
        z = rng.standard_normal((3,) + tuple(np.atleast_1d(size)))
        out = np.tensordot(self.chol, z, axes=(1, 0))
        return out[0], out[1], out[2]


def gle_drift(gamma, nu, beta, dt):
    """Build the exact one-step update of the (p, z) OU block.

    The Gaussian integrals have closed forms because N(0, I/beta) is
    the stationary law of the block:

        Sigma = (I - E E^T) / beta,      E = exp(M*dt)
        cross = M^{-1} (E - I) c
    """
    gamma, nu, beta, dt = float(gamma), float(nu), float(beta), float(dt)
    if gamma <= 0.0 or nu <= 0.0 or beta <= 0.0 or dt <= 0.0:
        raise ValueError("need gamma, nu, beta, dt > 0")
    a = np.sqrt(gamma) / nu
    m = np.array([[0.0, a], [-a, -1.0 / nu**2]])
    c = np.array([0.0, np.sqrt(2.0 / (beta * nu**2))])
    e = expm(m * dt)
    sigma = (np.eye(2) - e @ e.T) / beta
    cross = np.linalg.solve(m, (e - np.eye(2)) @ c)
    joint = np.empty((3, 3))
    joint[:2, :2] = sigma
    joint[:2, 2] = cross
    joint[2, :2] = cross
    joint[2, 2] = dt
    try:
        chol = np.linalg.cholesky(joint)
    except np.linalg.LinAlgError:
        # the (noise_z, dW) pair decorrelates only at O(dt); nudge the
        # diagonal when roundoff makes the matrix semidefinite
        jitter = 1e-14 * np.trace(joint)
        chol = np.linalg.cholesky(joint + jitter * np.eye(3))
    return GLEDrift(gamma, nu, beta, dt, e, sigma, cross, chol)


def babo_step(q, p, z, dt, grad, drift, noise_p, noise_z):
    """One BAB + exact-(p, z)-OU step of the generalized dynamics."""
    p_half = p - 0.5 * dt * grad(q)
    q_new = q + dt * p_half
    p_tilde = p_half - 0.5 * dt * grad(q_new)
    e = drift.propagator
    p_new = e[0, 0] * p_tilde + e[0, 1] * z + noise_p
    z_new = e[1, 0] * p_tilde + e[1, 1] * z + noise_z
    return q_new, p_new, z_new


@dataclass
class ReplicaState:
    """Mutable state of one trajectory replica."""

    q0: np.ndarray
    q: np.ndarray
    p: np.ndarray
    z: np.ndarray | None = None
    ito: float | np.ndarray = 0.0
    steps: int = 0
