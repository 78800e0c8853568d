"""Draws from the equilibrium (Gibbs) distribution of the dynamics.

Positions follow nu(dq) proportional to exp(-beta*V(q)) dq, momenta are
Gaussian with variance 1/beta per coordinate, and the auxiliary memory
variable of the quasi-Markovian dynamics is an independent Gaussian of
the same variance.
"""

import numpy as np

__all__ = [
    "replica_generator",
    "scan_envelope",
    "sample_positions",
    "sample_momenta",
    "sample_gle_aux",
]


def replica_generator(master_seed, index):
    """Independent, reproducible RNG stream for one replica.

    Streams are keyed by ``(master_seed, index)`` through
    ``SeedSequence`` so that replica ``index`` draws the same noise no
    matter how replicas are batched or scheduled.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(master_seed), int(index)]))
    )


def scan_envelope(pot, beta, n_scan=4096):
    """Upper bound M >= exp(-beta*V) on the torus for rejection sampling.

    Scans the fundamental domain on ``n_scan`` points per axis run
    through a coarse lattice (a flat ``n_scan`` budget in 2D) and takes
    the tighter of the scan and the potential's recorded minimum.
    """
    if pot.dim == 1:
        qs = np.linspace(-np.pi, np.pi, n_scan, endpoint=False)
        vmin_scan = float(np.min(pot.value(qs)))
    else:
        m = max(int(np.sqrt(n_scan)), 8)
        ax = np.linspace(-np.pi, np.pi, m, endpoint=False)
        grid = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
        vmin_scan = float(np.min(pot.value(grid)))
    vmin = min(vmin_scan, pot.vmin) if np.isfinite(pot.vmin) else vmin_scan
    return float(np.exp(-beta * vmin))


def sample_positions(pot, beta, rng, size):
    """Draw ``size`` equilibrium positions, shape (size,) or (size, dim).

    Periodic potentials use vectorised rejection sampling with a
    uniform proposal on [-pi, pi)^d; the harmonic well is sampled
    directly as the Gaussian it is.
    """
    beta = float(beta)
    if not pot.periodic:
        # exp(-beta*k*q^2/2) is a centred Gaussian
        return rng.normal(0.0, 1.0 / np.sqrt(beta * pot.param), size=size)

    if pot.force_id == 0:
        shape = (size,) if pot.dim == 1 else (size, pot.dim)
        return rng.uniform(-np.pi, np.pi, size=shape)

    env = scan_envelope(pot, beta)
    out = np.empty((size, pot.dim))
    have = 0
    while have < size:
        m = max(2 * (size - have), 64)
        prop = rng.uniform(-np.pi, np.pi, size=(m, pot.dim))
        accept_p = np.exp(-beta * pot.value(prop if pot.dim > 1 else prop[:, 0])) / env
        keep = prop[rng.uniform(size=m) < accept_p]
        take = min(len(keep), size - have)
        out[have:have + take] = keep[:take]
        have += take
    return out[:, 0] if pot.dim == 1 else out


def sample_momenta(beta, rng, size, dim=1):
    """Maxwellian momenta, N(0, 1/beta) per coordinate."""
    shape = (size,) if dim == 1 else (size, dim)
    return rng.normal(0.0, 1.0 / np.sqrt(float(beta)), size=shape)


def sample_gle_aux(beta, rng, size):
    """Stationary auxiliary variable of the quasi-Markovian model."""
    return rng.normal(0.0, 1.0 / np.sqrt(float(beta)), size=size)
