"""Helpers for positions living on the flat torus [-pi, pi)^d."""

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(q):
    """Reduce positions to the fundamental domain [-pi, pi).

    Works elementwise on scalars or arrays.  The reduction is
    ``((q + pi) mod 2*pi) - pi`` which lands exactly in [-pi, pi).

    Parameters
    ----------
    q : float or ndarray
        Unwrapped positions.

    Returns
    -------
    float or ndarray
        Wrapped positions in [-pi, pi).
    """
    return np.mod(np.asarray(q) + np.pi, TWO_PI) - np.pi


def periodic_distance(a, b):
    """Shortest signed distance a - b on the circle, in [-pi, pi)."""
    return wrap_angle(np.asarray(a) - np.asarray(b))
