"""Fourier x Hermite Galerkin solver for the stationary equation

    -L phi = p,      L = p d_q - V'(q) d_p + gamma (-p d_p + (1/beta) d_p^2)

posed in L^2 of the Gibbs measure on torus x R.  The effective
diffusion coefficient is the pairing of the solution with p, and the
solution itself (exported to a grid) is the control variate used by
the Monte Carlo estimator.

The basis is mu-orthonormal by construction:

    e_{i,j}(q, p) = sqrt(Z) * exp(beta*H/2) * g_i(q) * h_j(p),

with g_i real trigonometric modes and h_j Hermite functions rescaled
by a width sigma.  Conjugating L by the Gibbs weight turns the
mu-inner products into flat L^2 integrals of trigonometric and
Hermite-times-polynomial factors, so every matrix element is a tensor
product of 1D integrals; these are evaluated by trapezoid (in q) and
Gauss-Hermite (in p) rules sized to be exact at machine precision.

Because the generator is not symmetric and has a one-dimensional
kernel (constants), the discrete problem is solved as a saddle-point
system that pins the projection of the solution on constants to zero.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.special import roots_hermite

from .gridcv import GridCV, compute_d

__all__ = [
    "SpectralBasis",
    "SpectralSolution",
    "make_basis",
    "preset_params",
    "hermite_functions",
    "operator_blocks",
    "assemble_generator_matrix",
    "solve_saddle",
    "diffusion_from_spectral",
    "export_to_grid",
]

# named parameter sets: "desk" for quick runs, "table1" at production scale
PRESETS = {
    "desk": dict(n_modes=60, sigma_factor=1.0, nq=128, np_intervals=192),
    "table1": dict(n_modes=300, sigma_factor=0.1, nq=300, np_intervals=500),
}


def preset_params(name, beta):
    """Resolve a preset into (n_modes, sigma, nq, np_intervals, lp)."""
    try:
        p = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    root = np.sqrt(float(beta))
    return dict(n_modes=p["n_modes"], sigma=p["sigma_factor"] / root,
                nq=p["nq"], np_intervals=p["np_intervals"], lp=9.0 / root)


@dataclass(frozen=True)
class SpectralBasis:
    """Mode counts and scales of the tensor basis (indices 0..n each)."""

    n: int
    sigma: float
    beta: float
    gamma: float

    @property
    def size(self):
        return (self.n + 1) ** 2


def make_basis(n, beta, gamma, sigma=None):
    n = int(n)
    # an odd n leaves the top sin mode without its cos partner and the
    # projected transport operator drops rank (the pair is how d_q acts);
    # round up so the trigonometric pairs always close
    if n % 2:
        n += 1
    if sigma is None:
        sigma = 1.0 / np.sqrt(beta)
    return SpectralBasis(n, float(sigma), float(beta), float(gamma))


@dataclass(frozen=True)
class SpectralSolution:
    """Galerkin solution: coefficient matrix, multiplier, diagnostics."""

    coeffs: np.ndarray  # (n+1, n+1), q-mode major
    alpha: float
    basis: SpectralBasis
    rhs: np.ndarray     # coefficients of the projected momentum
    unit: np.ndarray    # normalized coefficients of the projected constant
    unit_norm: float
    residual_norm: float
    rhs_norm: float
    cond_estimate: float | None = None


# ---------------------------------------------------------------------------
# 1D building blocks
# ---------------------------------------------------------------------------

def _trig_values(n, q):
    """g_i(q) for i = 0..n: constant, then sin/cos pairs per frequency."""
    out = np.empty((n + 1, len(q)))
    out[0] = 1.0 / np.sqrt(2.0 * np.pi)
    rt = 1.0 / np.sqrt(np.pi)
    for i in range(1, n + 1):
        m = (i + 1) // 2
        out[i] = rt * (np.sin(m * q) if i % 2 == 1 else np.cos(m * q))
    return out


def _trig_derivs(n, q):
    out = np.empty((n + 1, len(q)))
    out[0] = 0.0
    rt = 1.0 / np.sqrt(np.pi)
    for i in range(1, n + 1):
        m = (i + 1) // 2
        out[i] = rt * m * (np.cos(m * q) if i % 2 == 1 else -np.sin(m * q))
    return out


def hermite_functions(n, y):
    """Orthonormal Hermite functions f_j(y), j = 0..n, on the flat line:
    f_j = (2 pi)^{-1/4} He_j(y) / sqrt(j!) * exp(-y^2/4), by the stable
    upward recurrence (values stay bounded)."""
    y = np.asarray(y, dtype=float)
    out = np.empty((n + 1,) + y.shape)
    out[0] = (2.0 * np.pi) ** (-0.25) * np.exp(-0.25 * y * y)
    if n >= 1:
        out[1] = y * out[0]
    for j in range(1, n):
        out[j + 1] = (y * out[j] - np.sqrt(j) * out[j - 1]) / np.sqrt(j + 1)
    return out


def _gauss_line_rule(n_nodes, rate):
    """Nodes y_m, weights v_m with  int G(y) dy ~= sum v_m G(y_m),
    exact for G = polynomial * exp(-rate*y^2).  Underflowed weights are
    dropped (their true contributions are below 1e-250)."""
    x, w = roots_hermite(n_nodes)
    keep = w > 0.0
    x, w = x[keep], w[keep]
    s = np.sqrt(rate)
    return x / s, np.exp(np.log(w) + x * x) / s


def _hermite_quadrature_matrices(basis):
    """All momentum-side 1D matrices by Gauss-Hermite quadrature.

    Returns (Pp, Dp, Fp, gram) where, in p-units,
        Pp[l,j] = <h_l, p h_j>,
        Dp[l,j] = <h_l, h_j'>,
        Fp[l,j] = <h_l, (1/beta) h_j'' + (1/2 - beta p^2/4) h_j>,
    and gram is the h-orthonormality matrix (identity up to quadrature
    error).
    """
    n, sigma, beta = basis.n, basis.sigma, basis.beta
    y, v = _gauss_line_rule(2 * n + 16, 0.5)
    f = hermite_functions(n, y)          # f_j(y)
    rtj = np.sqrt(np.arange(n + 1))
    fd = np.zeros_like(f)                # f_j'(y)
    fd[1:] = rtj[1:, None] * f[:-1]
    fd -= 0.5 * y * f
    fdd = np.empty_like(f)               # f_j''(y)
    fdd[:] = (0.25 * y * y - 0.5) * f
    fdd[1:] -= y * rtj[1:, None] * f[:-1]
    fdd[2:] += (rtj[2:] * rtj[1:-1])[:, None] * f[:-2]

    fv = f * v
    gram = fv @ f.T
    pp = sigma * (fv * y) @ f.T
    dp = (fv @ fd.T) / sigma
    fp = (fv @ fdd.T) / (beta * sigma**2) \
        + (fv * (0.5 - 0.25 * beta * sigma**2 * y * y)) @ f.T
    return pp, dp, fp, gram


def _gibbs_moment_vectors(basis, kmax=1):
    """m_k[j] = int p^k exp(-beta p^2/4) h_j(p) dp for k = 0..kmax.

    The integrand's Gaussian rate is (1 + beta sigma^2)/4 in y-units,
    so a dedicated rule is used and the Hermite recurrence is run on
    pre-damped seed values to keep everything bounded.
    """
    n, sigma, beta = basis.n, basis.sigma, basis.beta
    rate = 0.25 * (1.0 + beta * sigma**2)
    y, v = _gauss_line_rule(2 * n + 16, rate)
    rho = np.empty((n + 1, len(y)))
    rho[0] = (2.0 * np.pi) ** (-0.25) * np.exp(-rate * y * y)
    if n >= 1:
        rho[1] = y * rho[0]
    for j in range(1, n):
        rho[j + 1] = (y * rho[j] - np.sqrt(j) * rho[j - 1]) / np.sqrt(j + 1)
    return [sigma ** (k + 0.5) * (rho * (v * y**k)).sum(axis=1)
            for k in range(kmax + 1)]


def _position_rule(basis):
    n_nodes = max(8 * basis.n, 64)
    q = -np.pi + 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    return q, 2.0 * np.pi / n_nodes


def _position_matrices(basis, pot):
    """Dq[k,i] = <g_k, g_i'>, Vq[k,i] = <g_k, V' g_i>, a0[i] =
    <g_i, exp(-beta V/2)>, all by periodic trapezoid (exact here)."""
    q, h = _position_rule(basis)
    g = _trig_values(basis.n, q)
    gd = _trig_derivs(basis.n, q)
    dq = h * (g @ gd.T)
    vq = h * ((g * pot.grad(q)) @ g.T)
    a0 = h * (g @ np.exp(-0.5 * basis.beta * pot.value(q)))
    gram = h * (g @ g.T)
    return dq, vq, a0, gram


def _sparsify(a, rel=1e-14):
    m = np.abs(a).max()
    out = np.where(np.abs(a) >= rel * m, a, 0.0) if m > 0 else a
    return scipy.sparse.csr_matrix(out)


def operator_blocks(basis, pot):
    """Hamiltonian and fluctuation/dissipation blocks of <e, -L e>.

    The full matrix is ham + gamma * fd; they are exposed separately
    because the skew part (ham) and the dissipative spectrum (fd) have
    independent exact checks.
    """
    pp, dp, fp, gram_h = _hermite_quadrature_matrices(basis)
    dq, vq, a0, gram_q = _position_matrices(basis, pot)
    for gram in (gram_h, gram_q):
        err = np.abs(gram - np.eye(basis.n + 1)).max()
        if err > 1e-8:
            raise RuntimeError(
                f"basis orthonormality check failed (error {err:.2e}); "
                "quadrature resolution insufficient for this potential")
    ham = -scipy.sparse.kron(_sparsify(dq), _sparsify(pp), format="csr") \
        + scipy.sparse.kron(_sparsify(vq), _sparsify(dp), format="csr")
    eye = scipy.sparse.identity(basis.n + 1, format="csr")
    fd = -scipy.sparse.kron(eye, _sparsify(fp), format="csr")
    return {"ham": ham, "fd": fd, "a0": a0}


def assemble_generator_matrix(basis, pot):
    """Sparse matrix of <e_{k,l}, -L e_{i,j}> (row-major (i, j) order)."""
    blocks = operator_blocks(basis, pot)
    return (blocks["ham"] + basis.gamma * blocks["fd"]).tocsr()


def _projection_vectors(basis, pot):
    """Coefficients of the mu-projections of p (rhs) and 1 (constraint)."""
    _, _, a0, _ = _position_matrices(basis, pot)
    m0, m1 = _gibbs_moment_vectors(basis, kmax=1)
    q, h = _position_rule(basis)
    zq = h * np.exp(-basis.beta * pot.value(q)).sum()
    z = zq * np.sqrt(2.0 * np.pi / basis.beta)
    rhs = np.outer(a0, m1).ravel() / np.sqrt(z)
    ones = np.outer(a0, m0).ravel() / np.sqrt(z)
    norm = np.linalg.norm(ones)
    return rhs, ones / norm, norm


def solve_saddle(a, basis, pot, dense_cutoff=80):
    """Solve the constrained Galerkin system

        [[A, u], [u^T, 0]] (coeffs; alpha) = (rhs; 0)

    where u spans the projected constants (the near-kernel of A).
    Dense LU with a condition estimate for moderate sizes; ILU-
    preconditioned GMRES (direct sparse fallback) beyond that.
    """
    rhs, unit, unit_norm = _projection_vectors(basis, pot)
    m = a.shape[0]
    ext = np.zeros(m + 1)
    ext[:m] = rhs
    cond = None
    if basis.n <= dense_cutoff:
        k = np.zeros((m + 1, m + 1))
        k[:m, :m] = a.toarray() if scipy.sparse.issparse(a) else a
        k[:m, m] = unit
        k[m, :m] = unit
        lu, piv = scipy.linalg.lu_factor(k)
        x = scipy.linalg.lu_solve((lu, piv), ext)
        anorm = np.linalg.norm(k, 1)
        rcond = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")[0]
        cond = 1.0 / rcond if rcond > 0 else np.inf
        if cond > 1e12:
            warnings.warn(
                f"saddle system ill-conditioned (cond~{cond:.2e}) at "
                f"gamma={basis.gamma:g}; solution may be inaccurate",
                RuntimeWarning)
        resid = k @ x - ext
    else:
        k = scipy.sparse.bmat(
            [[a, unit[:, None]], [unit[None, :], None]], format="csc")
        ext_norm = max(np.linalg.norm(ext), 1e-300)

        def rel_residual(candidate):
            r = np.linalg.norm(k @ candidate - ext) / ext_norm
            return r if np.isfinite(r) else np.inf

        # the bordered system has a zero diagonal entry, which incomplete
        # factorizations handle erratically: accept the iterative solution
        # only after checking its true residual, else fall back to a
        # direct sparse factorization
        x = None
        try:
            ilu = scipy.sparse.linalg.spilu(k, drop_tol=1e-6, fill_factor=30)
            prec = scipy.sparse.linalg.LinearOperator(k.shape, ilu.solve)
            try:
                cand, info = scipy.sparse.linalg.gmres(
                    k, ext, M=prec, rtol=1e-12, atol=0.0, restart=200,
                    maxiter=200)
            except TypeError:  # older scipy spells the tolerance "tol"
                cand, info = scipy.sparse.linalg.gmres(
                    k, ext, M=prec, tol=1e-12, atol=0.0, restart=200,
                    maxiter=200)
            if info == 0 and rel_residual(cand) < 1e-10:
                x = cand
        except RuntimeError:
            pass
        if x is None:
            x = scipy.sparse.linalg.spsolve(k, ext)
        resid = k @ x - ext
        res_rel = np.linalg.norm(resid) / ext_norm
        if res_rel > 1e-8:
            warnings.warn(
                f"sparse saddle solve inaccurate (relative residual "
                f"{res_rel:.2e}) at gamma={basis.gamma:g}", RuntimeWarning)
    nb = basis.n + 1
    return SpectralSolution(
        coeffs=x[:m].reshape(nb, nb), alpha=float(x[m]), basis=basis,
        rhs=rhs, unit=unit, unit_norm=unit_norm,
        residual_norm=float(np.linalg.norm(resid)),
        rhs_norm=float(np.linalg.norm(ext)), cond_estimate=cond)


def diffusion_from_spectral(sol):
    """Effective diffusion <Psi_N, p> from the coefficients."""
    return float(sol.coeffs.ravel() @ sol.rhs)


# ---------------------------------------------------------------------------
# grid export
# ---------------------------------------------------------------------------

def _weighted_hermite(basis, p):
    """w_j(p) = exp(beta p^2/4) h_j(p) and its p-derivative.

    The exponential prefactor is j-independent, so w_j obeys the same
    recurrence as the Hermite functions with a damped/amplified seed;
    for beta sigma^2 <= 1 everything stays bounded on the grid.
    """
    n, sigma, beta = basis.n, basis.sigma, basis.beta
    y = np.asarray(p, dtype=float) / sigma
    w = np.empty((n + 1, len(y)))
    w[0] = sigma ** (-0.5) * (2.0 * np.pi) ** (-0.25) * np.exp(
        0.25 * (beta * sigma**2 - 1.0) * y * y)
    if n >= 1:
        w[1] = y * w[0]
    for j in range(1, n):
        w[j + 1] = (y * w[j] - np.sqrt(j) * w[j - 1]) / np.sqrt(j + 1)
    rtj = np.sqrt(np.arange(n + 1))
    wd = (0.5 * beta * p - 0.5 * y / sigma) * w
    wd[1:] += (rtj[1:, None] * w[:-1]) / sigma
    return w, wd


def export_to_grid(sol, pot, nq, np_intervals, lp):
    """Tabulate the solution and its momentum derivative on a grid.

    Derivatives come from the Hermite recurrence, not finite
    differences, so the exported gradient is exact at the nodes.
    """
    basis = sol.basis
    q = -np.pi + 2.0 * np.pi * np.arange(nq) / nq
    p = np.linspace(-lp, lp, np_intervals + 1)
    w, wd = _weighted_hermite(basis, p)
    g = _trig_values(basis.n, q)
    n_z = 4096
    qz = -np.pi + 2.0 * np.pi * np.arange(n_z) / n_z
    zq = (2.0 * np.pi / n_z) * np.exp(-basis.beta * pot.value(qz)).sum()
    z = zq * np.sqrt(2.0 * np.pi / basis.beta)
    pref = np.sqrt(z) * np.exp(0.5 * basis.beta * pot.value(q))
    mix = g.T @ sol.coeffs
    grid = GridCV(
        psi=np.ascontiguousarray(pref[:, None] * (mix @ w)),
        dpsi=np.ascontiguousarray(pref[:, None] * (mix @ wd)),
        lp=float(lp), beta=basis.beta, gamma=basis.gamma,
        potential=pot.name, source="galerkin", d_psi=0.0)
    return replace(grid, d_psi=compute_d(grid, pot))
