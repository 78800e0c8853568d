"""Small-friction limiting control variate.

For weak damping the solution of the stationary problem, scaled by the
friction, converges to a function of the energy shell alone:

    phi0(q, p) = sign(p) * f(H(q, p)),
    f(E) = 2*pi * int_{E_floor}^{E} dE' / S(E'),
    S(E) = int_T sqrt(2*(E - V(q))_+) dq,

where S is the area-derivative (period) integral of the level set.
The energy floor is the maximum of the landscape: below the
separatrix the trajectory is trapped in a well, winds no distance, and
the limiting solution vanishes.  (Starting the integral at the bottom
of the well instead makes f diverge logarithmically and puts a jump of
2*f across p = 0 inside the wells; starting at the separatrix keeps
phi0 in the natural energy space.)

The momentum derivative is analytic:

    d_p phi0 = 2*pi*|p| / S(H)   above the floor, else 0,

which is what the estimator actually consumes.  phi0 has a kink at the
separatrix and is not twice differentiable there; only the first
derivative is reliable near that set.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import PchipInterpolator

from .gridcv import GridCV, compute_d

__all__ = [
    "UnderdampedProfile",
    "s_und",
    "build_profile",
    "eval_phi0",
    "limiting_diffusion",
    "export_to_grid",
]


def s_und(energy, pot, n_nodes=2048):
    """Level-set integral S(E) = int sqrt(2*(E - V)_+) dq on the torus.

    Vectorised over energies.  Uniform trapezoid: for E above the
    landscape maximum the integrand is smooth and periodic, so the
    rule converges spectrally.
    """
    if not pot.periodic:
        raise ValueError("level-set integral needs a periodic potential")
    e = np.asarray(energy, dtype=float)
    if np.any(e <= pot.vmax):
        raise ValueError(
            f"energy must exceed the landscape maximum {pot.vmax:g}")
    q = -np.pi + 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    v = pot.value(q)
    vals = np.sqrt(2.0 * np.clip(e[..., None] - v, 0.0, None)).mean(axis=-1)
    out = 2.0 * np.pi * vals
    return float(out) if np.isscalar(energy) else out


@dataclass(frozen=True)
class UnderdampedProfile:
    """Tabulated energy profile f with its evaluation machinery.

    ``e0`` is the energy floor (landscape maximum); above ``e_max``
    the profile continues with the free-flight asymptote
    f(e_max) + sqrt(2E) - sqrt(2 e_max).  The across-shell coordinate
    of the interpolant is s = sqrt(E - e0): f is smooth in s both when
    S(e0) > 0 (f linear near the floor) and when S(e0) = 0 (f ~ s, a
    square root in E that a cubic in E cannot represent).
    """

    e0: float
    e_max: float
    energies: np.ndarray
    values: np.ndarray
    pot: object
    _interp: PchipInterpolator

    def phi(self, energy):
        """Profile value f(E), vectorised; zero at and below the floor."""
        e = np.asarray(energy, dtype=float)
        out = np.zeros_like(e)
        mid = (e > self.e0) & (e <= self.e_max)
        out[mid] = self._interp(np.sqrt(e[mid] - self.e0))
        hi = e > self.e_max
        if np.any(hi):
            tail = self._interp(np.sqrt(self.e_max - self.e0)) \
                + np.sqrt(2.0 * e[hi]) - np.sqrt(2.0 * self.e_max)
            out[hi] = tail
        return float(out) if np.isscalar(energy) else out


def build_profile(pot, e_max):
    """Integrate f'(E) = 2*pi/S(E) from the floor up to e_max.

    In the substituted variable s = sqrt(E - floor) the right-hand
    side 4*pi*s/S(floor + s^2) is finite even when S vanishes at the
    floor (the V = const case), so one adaptive high-order solve
    covers every registered potential.  Nodes are then re-expressed in
    energy and bridged with a monotone cubic.
    """
    floor = float(pot.vmax)
    e_max = float(e_max)
    if not np.isfinite(floor) or e_max <= floor:
        raise ValueError("need a bounded potential and e_max above its max")
    s_max = np.sqrt(e_max - floor)
    s0 = 1e-6 * max(1.0, s_max)

    def rhs(s, _phi):
        return 4.0 * np.pi * s / s_und(floor + s * s, pot)

    sol = solve_ivp(rhs, (s0, s_max), [s0 * rhs(s0, 0.0)], method="DOP853",
                    rtol=1e-10, atol=1e-12, max_step=s_max / 400.0)
    if not sol.success:
        raise RuntimeError(f"energy-profile integration failed: {sol.message}")
    s_nodes = np.concatenate([[0.0], sol.t])
    phi_nodes = np.concatenate([[0.0], sol.y[0]])
    e_nodes = floor + s_nodes**2
    interp = PchipInterpolator(s_nodes, phi_nodes)
    return UnderdampedProfile(e0=floor, e_max=e_max, energies=e_nodes,
                              values=phi_nodes, pot=pot, _interp=interp)


def eval_phi0(profile, q, p):
    """(phi0, d_p phi0) at arbitrary phase-space points (vectorised)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    h = profile.pot.value(q) + 0.5 * p * p
    h, p = np.broadcast_arrays(h, p)
    phi = np.sign(p) * profile.phi(h)
    dphi = np.zeros_like(phi)
    above = h > profile.e0
    if np.any(above):
        dphi[above] = 2.0 * np.pi * np.abs(p[above]) / s_und(h[above],
                                                             profile.pot)
    return phi, dphi


def limiting_diffusion(profile, beta):
    """Small-friction limit of gamma * D by direct energy quadrature:

        D_lim = (2 pi)^2 * (2/(beta*Z)) * int_floor^inf exp(-beta E)/S(E) dE,

    with Z the full phase-space partition function.  Used as an
    independent cross-check of the grid quadrature of d[phi0].
    """
    pot = profile.pot
    q = -np.pi + 2.0 * np.pi * np.arange(4096) / 4096
    zq = (2.0 * np.pi / 4096) * np.exp(-beta * pot.value(q)).sum()
    z = zq * np.sqrt(2.0 * np.pi / beta)

    def f(e):
        return np.exp(-beta * e) / s_und(e, pot)

    lo = np.nextafter(profile.e0, np.inf) + 1e-300
    split = profile.e0 + 10.0 / beta
    head, _ = quad(f, lo, split, limit=400)
    tail, _ = quad(f, split, np.inf, limit=200)
    return (2.0 * np.pi) ** 2 * 2.0 * (head + tail) / (beta * z)


def export_to_grid(profile, gamma, nq, np_intervals, lp, beta):
    """Tabulate psi = phi0/gamma as a grid control variate.

    The 1/gamma scaling makes psi approximate the actual solution at
    friction gamma, which is what the estimator subtracts.
    """
    q = -np.pi + 2.0 * np.pi * np.arange(nq) / nq
    p = np.linspace(-lp, lp, np_intervals + 1)
    qq, pp = np.meshgrid(q, p, indexing="ij")
    phi, dphi = eval_phi0(profile, qq, pp)
    grid = GridCV(psi=np.ascontiguousarray(phi / gamma),
                  dpsi=np.ascontiguousarray(dphi / gamma),
                  lp=float(lp), beta=float(beta), gamma=float(gamma),
                  potential=profile.pot.name, source="underdamped", d_psi=0.0)
    return replace(grid, d_psi=compute_d(grid, profile.pot))
