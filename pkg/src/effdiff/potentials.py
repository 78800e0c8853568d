"""Model potentials and their registry.

All periodic entries are defined on the flat torus [-pi, pi)^d; the
quadratic well is the one non-periodic entry and lives on the real
line.  Each potential carries a small integer ``force_id`` so the
compiled trajectory kernels can dispatch on it without boxing Python
callables.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["Potential", "make_potential", "available_potentials"]

# dispatch codes understood by the integrator kernels
FORCE_ZERO = 0
FORCE_SINHALF = 1  # gradient sin(q)/2, shared by "cosine" and "pendulum"
FORCE_LINEAR = 2  # gradient k*q (non-periodic harmonic well)
FORCE_COS2D = 4  # two-dimensional coupled cosine potential


@dataclass(frozen=True)
class Potential:
    """A scalar potential together with its gradient.

    Attributes
    ----------
    name : str
        Registry key.
    dim : int
        Number of position coordinates (1 or 2).
    periodic : bool
        False only for the harmonic well, whose displacement is taken
        on the real line instead of the torus.
    param : float
        Stiffness ``k`` for ``quadratic``, coupling ``delta`` for
        ``cos2d``; ignored by the other entries.
    force_id : int
        Dispatch code for the compiled kernels.
    vmin, vmax : float
        Global minimum/maximum of V (``vmax = inf`` when unbounded).
        The maximum doubles as the separatrix energy of the periodic
        one-well potentials.
    """

    name: str
    dim: int
    periodic: bool
    param: float
    force_id: int
    vmin: float
    vmax: float
    _value: Callable = field(repr=False)
    _grad: Callable = field(repr=False)

    def value(self, q):
        """Evaluate V(q).  For ``dim == 2`` expects shape (..., 2)."""
        return self._value(np.asarray(q, dtype=float))

    def grad(self, q):
        """Evaluate the gradient of V, with the same shape as ``q``."""
        return self._grad(np.asarray(q, dtype=float))


def _zero(param):
    return Potential(
        "zero", 1, True, param, FORCE_ZERO, 0.0, 0.0,
        _value=lambda q: np.zeros_like(q),
        _grad=lambda q: np.zeros_like(q),
    )


def _cosine(param):
    # V(q) = -cos(q)/2, the standard one-well cosine landscape
    return Potential(
        "cosine", 1, True, param, FORCE_SINHALF, -0.5, 0.5,
        _value=lambda q: -0.5 * np.cos(q),
        _grad=lambda q: 0.5 * np.sin(q),
    )


def _pendulum(param):
    # V(q) = (1 - cos(q))/2: same force as "cosine", energy shifted so
    # the well bottom sits at zero
    return Potential(
        "pendulum", 1, True, param, FORCE_SINHALF, 0.0, 1.0,
        _value=lambda q: 0.5 * (1.0 - np.cos(q)),
        _grad=lambda q: 0.5 * np.sin(q),
    )


def _quadratic(param):
    k = float(param)
    if k <= 0.0:
        raise ValueError("quadratic potential needs stiffness k > 0")
    return Potential(
        "quadratic", 1, False, k, FORCE_LINEAR, 0.0, np.inf,
        _value=lambda q: 0.5 * k * q * q,
        _grad=lambda q: k * q,
    )


def _cos2d(param):
    delta = float(param)
    if abs(delta) > 0.5:
        raise ValueError("cos2d coupling must satisfy |delta| <= 0.5")

    def value(q):
        c1, c2 = np.cos(q[..., 0]), np.cos(q[..., 1])
        return -0.5 * (c1 + c2) - delta * c1 * c2

    def grad(q):
        s1, s2 = np.sin(q[..., 0]), np.sin(q[..., 1])
        c1, c2 = np.cos(q[..., 0]), np.cos(q[..., 1])
        g = np.empty_like(q)
        g[..., 0] = 0.5 * s1 + delta * s1 * c2
        g[..., 1] = 0.5 * s2 + delta * c1 * s2
        return g

    # corner values; exact for |delta| <= 1/2 where the only critical
    # points have sin(q_i) = 0
    return Potential(
        "cos2d", 2, True, delta, FORCE_COS2D, -1.0 - delta, 1.0 - delta,
        _value=value, _grad=grad,
    )


_REGISTRY = {
    "zero": (_zero, 0.0),
    "cosine": (_cosine, 0.0),
    "pendulum": (_pendulum, 0.0),
    "quadratic": (_quadratic, 1.0),
    "cos2d": (_cos2d, 0.0),
}


def make_potential(name, param=None):
    """Build a registered potential.

    Parameters
    ----------
    name : str
        One of ``available_potentials()``.
    param : float, optional
        Stiffness for ``quadratic`` (default 1.0) or coupling for
        ``cos2d`` (default 0.0).  Ignored otherwise.
    """
    try:
        builder, default = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown potential {name!r}; choose from {sorted(_REGISTRY)}"
        ) from None
    return builder(default if param is None else float(param))


def available_potentials():
    return sorted(_REGISTRY)
