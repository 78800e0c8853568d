"""Tabulated control variates on a Cartesian (q, p) grid.

A control variate is a scalar function psi(q, p) together with its
momentum gradient; both are stored on a uniform grid

    q_i = -pi + i * 2*pi/Nq,  i = 0..Nq-1   (periodic, column Nq == 0)
    p_j = -Lp + j * 2*Lp/Np,  j = 0..Np

and queried through a bilinear interpolant.  Momenta outside
[-Lp, Lp] are clamped to the boundary cell: with Lp around nine
thermal widths such excursions are effectively never observed, but the
interpolant must still return something finite.

The module also computes the constant

    d[psi] = gamma/beta * E_mu[ |d_p psi|^2 ]

that recentres the variance-reduced estimator, and (de)serialises
grids to a small binary cache so a preprocessed control variate can be
shared between runs.
"""

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .torus import wrap_angle

__all__ = [
    "GridCV",
    "build_grid",
    "interpolate",
    "compute_d",
    "tensorize_2d",
    "save_cache",
    "load_cache",
    "cache_sha1",
    "GLECV",
    "save_gle_cv",
    "load_gle_cv",
    "interpolate_gle",
    "compute_d_gle",
]

_MAGIC = b"EDGRCV01"


@dataclass(frozen=True)
class GridCV:
    """Control variate tabulated on a (q, p) grid.

    ``psi`` and ``dpsi`` have shape (Nq, Np+1); ``d_psi`` is the
    precomputed recentring constant for the (gamma, beta) the grid was
    built for.  ``tensorized`` grids represent psi(q1, p1) acting on
    the first coordinate pair of a 2D system, with the second gradient
    component identically zero; ``delta`` then records the coupling of
    the 2D measure used for d_psi.
    """

    psi: np.ndarray
    dpsi: np.ndarray
    lp: float
    beta: float
    gamma: float
    potential: str
    source: str
    d_psi: float
    delta: float = 0.0
    tensorized: bool = False

    @property
    def nq(self):
        return self.psi.shape[0]

    @property
    def np_intervals(self):
        return self.psi.shape[1] - 1

    @property
    def q_nodes(self):
        return -np.pi + 2.0 * np.pi * np.arange(self.nq) / self.nq

    @property
    def p_nodes(self):
        return np.linspace(-self.lp, self.lp, self.np_intervals + 1)


def build_grid(psi_fn, dpsi_fn, nq, np_intervals, lp, beta, gamma, pot,
               source, compute_d_now=True):
    """Tabulate callables psi(q, p), d_p psi(q, p) on the grid."""
    q = -np.pi + 2.0 * np.pi * np.arange(nq) / nq
    p = np.linspace(-lp, lp, np_intervals + 1)
    qq, pp = np.meshgrid(q, p, indexing="ij")
    grid = GridCV(
        psi=np.ascontiguousarray(psi_fn(qq, pp), dtype=float),
        dpsi=np.ascontiguousarray(dpsi_fn(qq, pp), dtype=float),
        lp=float(lp), beta=float(beta), gamma=float(gamma),
        potential=pot.name, source=source, d_psi=0.0,
    )
    if compute_d_now:
        grid = replace(grid, d_psi=compute_d(grid, pot))
    return grid


def _q_cells(nq, q):
    """Cell index and fraction along q for wrapped coordinates."""
    x = (wrap_angle(q) + np.pi) * (nq / (2.0 * np.pi))
    i0 = np.minimum(np.floor(x).astype(np.int64), nq - 1)
    return i0, (i0 + 1) % nq, x - i0


def _p_cells(np_intervals, lp, p):
    """Cell index and fraction along p, clamped to [-Lp, Lp]."""
    y = (np.asarray(p, dtype=float) + lp) * (np_intervals / (2.0 * lp))
    j0 = np.clip(np.floor(y).astype(np.int64), 0, np_intervals - 1)
    return j0, np.clip(y - j0, 0.0, 1.0)


def interpolate(grid, q, p):
    """Bilinear lookup of (psi, d_p psi) at arbitrary (q, p).

    q is reduced to the torus; p is clamped to the tabulated range.
    Returns arrays broadcast to the common shape of q and p.
    """
    q, p = np.broadcast_arrays(np.asarray(q, float), np.asarray(p, float))
    i0, i1, fx = _q_cells(grid.nq, q)
    j0, fy = _p_cells(grid.np_intervals, grid.lp, p)
    j1 = j0 + 1
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w10 = fx * (1.0 - fy)
    w11 = fx * fy

    def blend(a):
        return (w00 * a[i0, j0] + w01 * a[i0, j1]
                + w10 * a[i1, j0] + w11 * a[i1, j1])

    return blend(grid.psi), blend(grid.dpsi)


def _dpsi_on_fine_q(grid, q_fine):
    """Rows of d_p psi at off-node q (linear blend of adjacent rows)."""
    i0, i1, fx = _q_cells(grid.nq, q_fine)
    return (1.0 - fx)[:, None] * grid.dpsi[i0] + fx[:, None] * grid.dpsi[i1]


def _gauss_p_weights(p_nodes, beta):
    """Trapezoid weights on the p grid against the Maxwellian factor."""
    w = np.exp(-0.5 * beta * p_nodes**2)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def compute_d(grid, pot, gamma=None, beta=None, n_q=None):
    """d[psi] = gamma/beta * mean of |d_p psi|^2 under the Gibbs measure.

    Quadrature: uniform trapezoid in q (the grid upgraded to at least
    1024 nodes through the interpolant) times trapezoid in p on the
    grid nodes with Gaussian weight; the same rule normalises the
    partition function so the p-truncation bias cancels in the ratio.
    """
    gamma = grid.gamma if gamma is None else float(gamma)
    beta = grid.beta if beta is None else float(beta)
    n_q = max(1024, grid.nq) if n_q is None else int(n_q)
    q_fine = -np.pi + 2.0 * np.pi * np.arange(n_q) / n_q
    rows = _dpsi_on_fine_q(grid, q_fine)
    wq = np.exp(-beta * pot.value(q_fine))
    wp = _gauss_p_weights(grid.p_nodes, beta)
    num = wq @ (rows**2) @ wp
    den = wq.sum() * wp.sum()
    return gamma / beta * num / den


def tensorize_2d(grid, pot2d, n_q1=1024, n_q2=512):
    """Promote a 1D control variate to psi(q, p) = psi_1d(q1, p1).

    The gradient picks up only a first component, so the grid arrays
    are reused as-is; what changes is d[psi], now averaged over the
    position marginal of the coupled 2D Gibbs measure:

        d = gamma/beta * int K(q1) m(q1) dq1 / int m(q1) dq1,
        K(q1) = E_kappa[ |d_p psi(q1, p)|^2 ],
        m(q1) = int exp(-beta V_2d(q1, q2)) dq2.
    """
    if grid.tensorized:
        raise ValueError("control variate is already tensorized")
    beta = grid.beta
    q1 = -np.pi + 2.0 * np.pi * np.arange(n_q1) / n_q1
    rows = _dpsi_on_fine_q(grid, q1)
    wp = _gauss_p_weights(grid.p_nodes, beta)
    k_of_q1 = (rows**2) @ wp / wp.sum()

    q2 = -np.pi + 2.0 * np.pi * np.arange(n_q2) / n_q2
    qq1, qq2 = np.meshgrid(q1, q2, indexing="ij")
    pts = np.stack([qq1, qq2], axis=-1)
    marginal = np.exp(-beta * pot2d.value(pts)).sum(axis=1)
    d2 = grid.gamma / beta * (marginal @ k_of_q1) / marginal.sum()
    return replace(grid, d_psi=float(d2), delta=pot2d.param,
                   potential=pot2d.name, tensorized=True)


# ---------------------------------------------------------------------------
# binary cache
# ---------------------------------------------------------------------------

def save_cache(grid, path):
    """Write the grid to a little-endian binary cache file."""
    name = grid.potential.encode()
    source = grid.source.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(
            "<qqddddd q", grid.nq, grid.np_intervals, grid.lp, grid.beta,
            grid.gamma, grid.delta, grid.d_psi, 1 if grid.tensorized else 0,
        ))
        fh.write(struct.pack("<q", len(name)) + name)
        fh.write(struct.pack("<q", len(source)) + source)
        fh.write(np.ascontiguousarray(grid.psi, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid.dpsi, dtype="<f8").tobytes())


def load_cache(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a control-variate cache file")
        nq, npi, lp, beta, gamma, delta, d_psi, tens = struct.unpack(
            "<qqddddd q", fh.read(8 * 8))
        (n,) = struct.unpack("<q", fh.read(8))
        name = fh.read(n).decode()
        (n,) = struct.unpack("<q", fh.read(8))
        source = fh.read(n).decode()
        count = nq * (npi + 1)
        psi = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(nq, npi + 1)
        dpsi = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(nq, npi + 1)
    return GridCV(psi=psi.copy(), dpsi=dpsi.copy(), lp=lp, beta=beta,
                  gamma=gamma, potential=name, source=source, d_psi=d_psi,
                  delta=delta, tensorized=bool(tens))


def cache_sha1(path):
    """Content hash of a cache file, recorded in every output file."""
    h = hashlib.sha1()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# control variates for the generalized dynamics: psi(q, p, z) on a grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GLECV:
    """User-supplied control variate for the generalized dynamics,
    tabulated with its z-derivative on a (q, p, z) box grid."""

    psi: np.ndarray   # (Nq, Np+1, Nz+1)
    dzpsi: np.ndarray
    lp: float
    lz: float
    beta: float
    gamma: float
    nu: float
    potential: str
    d_psi: float

    @property
    def nq(self):
        return self.psi.shape[0]

    @property
    def p_nodes(self):
        return np.linspace(-self.lp, self.lp, self.psi.shape[1])

    @property
    def z_nodes(self):
        return np.linspace(-self.lz, self.lz, self.psi.shape[2])


def save_gle_cv(cv, path):
    np.savez(
        path, psi=cv.psi, dzpsi=cv.dzpsi,
        meta=np.array([cv.lp, cv.lz, cv.beta, cv.gamma, cv.nu, cv.d_psi]),
        potential=np.array(cv.potential),
    )


def load_gle_cv(path):
    with np.load(path, allow_pickle=False) as data:
        lp, lz, beta, gamma, nu, d_psi = data["meta"]
        return GLECV(psi=data["psi"], dzpsi=data["dzpsi"], lp=float(lp),
                     lz=float(lz), beta=float(beta), gamma=float(gamma),
                     nu=float(nu), potential=str(data["potential"]),
                     d_psi=float(d_psi))


def interpolate_gle(cv, q, p, z):
    """Trilinear lookup of (psi, d_z psi); q wraps, p and z clamp."""
    q, p, z = np.broadcast_arrays(
        np.asarray(q, float), np.asarray(p, float), np.asarray(z, float))
    np_i = cv.psi.shape[1] - 1
    nz_i = cv.psi.shape[2] - 1
    i0, i1, fx = _q_cells(cv.nq, q)
    j0, fy = _p_cells(np_i, cv.lp, p)
    k0, fz = _p_cells(nz_i, cv.lz, z)
    j1, k1 = j0 + 1, k0 + 1

    def blend(a):
        c00 = a[i0, j0, k0] * (1 - fz) + a[i0, j0, k1] * fz
        c01 = a[i0, j1, k0] * (1 - fz) + a[i0, j1, k1] * fz
        c10 = a[i1, j0, k0] * (1 - fz) + a[i1, j0, k1] * fz
        c11 = a[i1, j1, k0] * (1 - fz) + a[i1, j1, k1] * fz
        return ((1 - fx) * ((1 - fy) * c00 + fy * c01)
                + fx * ((1 - fy) * c10 + fy * c11))

    return blend(cv.psi), blend(cv.dzpsi)


def compute_d_gle(cv, pot, n_q=1024):
    """d[psi] = 1/(beta*nu^2) * E[|d_z psi|^2] under the extended
    Gibbs measure exp(-beta*(V + p^2/2 + z^2/2))."""
    beta = cv.beta
    q_fine = -np.pi + 2.0 * np.pi * np.arange(n_q) / n_q
    i0, i1, fx = _q_cells(cv.nq, q_fine)
    cube = ((1.0 - fx)[:, None, None] * cv.dzpsi[i0]
            + fx[:, None, None] * cv.dzpsi[i1])
    wq = np.exp(-beta * pot.value(q_fine))
    wp = _gauss_p_weights(cv.p_nodes, beta)
    wz = _gauss_p_weights(cv.z_nodes, beta)
    num = np.einsum("i,ijk,j,k->", wq, cube**2, wp, wz)
    den = wq.sum() * wp.sum() * wz.sum()
    return num / den / (beta * cv.nu**2)
