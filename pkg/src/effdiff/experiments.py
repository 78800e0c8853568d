"""Experiment orchestration: config files, parameter sweeps, fits, plots.

A configuration is a flat mapping of ``key = value`` pairs (file or
CLI flags; flags win).  ``run_sweep`` walks the friction list, builds
or loads the requested control variate per cell, runs the Monte Carlo
cell, and writes one series CSV per cell plus a summary table.  A
cell that fails (unstable integration, solver error) is recorded and
the sweep moves on; the overall status is only clean when every cell
succeeded.

All outputs are deterministic: CSV floats are written with repr,
header comments are sorted, SVG output uses a fixed hash salt and no
timestamps.
"""

import csv
import math
import os
import re
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import runner
from .estimators import write_series_csv
from .gridcv import (cache_sha1, compute_d, load_cache, load_gle_cv,
                     save_cache, tensorize_2d)
from .potentials import make_potential
from .spectral import (assemble_generator_matrix, export_to_grid, make_basis,
                       preset_params, solve_saddle)
from .underdamped import build_profile
from .underdamped import export_to_grid as export_profile_to_grid

MAX_STEPS_PER_REPLICA = 10 ** 8

CV_CHOICES = ("none", "galerkin", "underdamped", "file")


@dataclass
class ExperimentConfig:
    """Flat experiment description; every field doubles as a CLI flag."""

    dynamics: str = "langevin-1d"
    potential: str = "cosine"
    param: float = math.nan       # potential parameter (stiffness / coupling)
    beta: float = 1.0
    gamma: str = "1.0"            # comma-separated friction list
    nu: float = 2.0               # memory time scale (gle only)
    dt: float = 1e-2
    t_rule: str = "fixed"         # "fixed" or e.g. "100/gamma"
    t_final: float = 100.0
    replicas: int = 1000
    snapshots: str = ""           # comma-separated intermediate times
    cv: str = "none"              # none | galerkin | underdamped | file
    cv_file: str = ""
    preset: str = "desk"          # desk | table1
    n_modes: int = 0              # 0 -> preset value
    sigma: float = 0.0            # 0 -> preset value
    nq: int = 0
    np_intervals: int = 0
    lp: float = 0.0
    e_max: float = 0.0            # 0 -> vmax + 100/beta
    direction: int = 0
    seed: int = 1234
    batch: int = 64
    workers: int = 0              # 0 -> EFFDIFF_WORKERS or cpu count
    cutoff: float = 1e-2          # friction cutoff for the scaling fit
    outdir: str = "out"

    @property
    def gammas(self):
        return tuple(float(s) for s in str(self.gamma).split(",") if s != "")

    @property
    def snapshot_times(self):
        s = str(self.snapshots).strip()
        if not s:
            return ()
        return tuple(float(x) for x in s.split(","))

    def resolved_t_final(self, gamma):
        """Apply the horizon rule at one friction value.

        Horizons are capped so a replica never takes more than 10^8
        steps; a cap triggers a warning.
        """
        rule = self.t_rule.strip()
        if rule == "fixed":
            t = float(self.t_final)
        else:
            m = re.fullmatch(r"([0-9eE.+-]+)\s*/\s*gamma", rule)
            if m is None:
                raise ValueError(
                    "t_rule must be 'fixed' or '<number>/gamma', got %r"
                    % rule)
            if gamma <= 0:
                raise ValueError("t_rule %r needs gamma > 0" % rule)
            t = float(m.group(1)) / gamma
        cap = MAX_STEPS_PER_REPLICA * self.dt
        if t > cap:
            warnings.warn("horizon %g capped at %g (10^8 steps)" % (t, cap),
                          RuntimeWarning)
            t = cap
        return t

    def to_meta(self):
        """Config echo for CSV header comments.

        The worker count is an execution detail, not part of the
        experiment definition, and is left out so parallelism cannot
        leak into the byte-exact outputs.
        """
        out = {}
        for f in fields(self):
            if f.name == "workers":
                continue
            v = getattr(self, f.name)
            out["config_" + f.name] = v
        return out


_BOOL = {"true": True, "false": False, "yes": True, "no": False}


def _coerce(name, kind, raw):
    if kind is float:
        return float(raw)
    if kind is int:
        return int(raw)
    return str(raw)


def parse_config_text(text, base=None):
    """Parse ``key = value`` lines into an ExperimentConfig."""
    cfg = base if base is not None else ExperimentConfig()
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError("line %d: expected key = value" % lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in known:
            raise ValueError("line %d: unknown key %r" % (lineno, key))
        cfg = replace(cfg, **{key: _coerce(key, types[key], raw)})
    return cfg


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config_text(fh.read(), base=base)


def _preset_resolved(cfg):
    """Preset numbers with explicit overrides applied."""
    params = preset_params(cfg.preset, cfg.beta)
    if cfg.n_modes > 0:
        params["n_modes"] = cfg.n_modes
    if cfg.sigma > 0:
        params["sigma"] = cfg.sigma
    if cfg.nq > 0:
        params["nq"] = cfg.nq
    if cfg.np_intervals > 0:
        params["np_intervals"] = cfg.np_intervals
    if cfg.lp > 0:
        params["lp"] = cfg.lp
    return params


def _base_potential_1d(cfg):
    """The 1D potential the control variate is built for.

    For the coupled 2D lattice this is the separable single-axis
    slice, which has the cosine profile.
    """
    if cfg.dynamics == "langevin-2d":
        return make_potential("cosine")
    param = None if math.isnan(cfg.param) else cfg.param
    return make_potential(cfg.potential, param)


def cell_potential(cfg):
    param = None if math.isnan(cfg.param) else cfg.param
    return make_potential(cfg.potential, param)


def _cv_cache_path(cfg, kind, gamma):
    name = "cv_%s_%s_gamma%s.bin" % (kind, cfg.potential, format(gamma, "g"))
    return os.path.join(cfg.outdir, name)


def build_cell_cv(cfg, gamma, profile_cache=None):
    """Build or load the control variate for one sweep cell.

    Returns (grid, gle_cv, cache_info); at most one of the first two
    is not None.  Galerkin and energy-profile tables are also written
    to the output directory so they can be reused with ``cv = file``;
    cache_info records the file and its content hash.
    """
    if cfg.cv == "none":
        return None, None, {}
    if cfg.dynamics == "gle":
        if cfg.cv != "file":
            raise ValueError(
                "the quasi-Markovian dynamics only supports cv = none "
                "or cv = file")
        gcv = load_gle_cv(cfg.cv_file)
        if abs(gcv.beta - cfg.beta) > 1e-12:
            raise ValueError("control variate beta %g != run beta %g"
                             % (gcv.beta, cfg.beta))
        if abs(gcv.nu - cfg.nu) > 1e-12:
            raise ValueError("control variate nu %g != run nu %g"
                             % (gcv.nu, cfg.nu))
        info = {"cv_cache_file": cfg.cv_file,
                "cv_cache_sha1": cache_sha1(cfg.cv_file)}
        return None, gcv, info

    pot1 = _base_potential_1d(cfg)
    params = _preset_resolved(cfg)

    if cfg.cv == "galerkin":
        basis = make_basis(params["n_modes"], cfg.beta, gamma,
                           sigma=params["sigma"])
        amat = assemble_generator_matrix(basis, pot1)
        sol = solve_saddle(amat, basis, pot1)
        grid = export_to_grid(sol, pot1, params["nq"],
                              params["np_intervals"], params["lp"])
        os.makedirs(cfg.outdir, exist_ok=True)
        cache = _cv_cache_path(cfg, "galerkin", gamma)
        save_cache(grid, cache)
    elif cfg.cv == "underdamped":
        if profile_cache is not None and profile_cache.get("profile") is not None:
            profile = profile_cache["profile"]
        else:
            e_max = cfg.e_max if cfg.e_max > 0 else pot1.vmax + 100.0 / cfg.beta
            profile = build_profile(pot1, e_max)
            if profile_cache is not None:
                profile_cache["profile"] = profile
        grid = export_profile_to_grid(profile, gamma, params["nq"],
                                      params["np_intervals"], params["lp"],
                                      cfg.beta)
        os.makedirs(cfg.outdir, exist_ok=True)
        cache = _cv_cache_path(cfg, "underdamped", gamma)
        save_cache(grid, cache)
    elif cfg.cv == "file":
        cache = cfg.cv_file
        grid = load_cache(cache)
        if abs(grid.beta - cfg.beta) > 1e-12:
            raise ValueError("control variate beta %g != run beta %g"
                             % (grid.beta, cfg.beta))
        # the table stays a valid control variate at any friction, but
        # its quadratic correction is friction-dependent
        grid = replace(grid, gamma=gamma,
                       d_psi=compute_d(grid, pot1, gamma=gamma,
                                       beta=cfg.beta))
    else:
        raise ValueError("cv must be one of %s" % (CV_CHOICES,))

    if cfg.dynamics == "langevin-2d":
        grid = tensorize_2d(grid, cell_potential(cfg))
    info = {"cv_cache_file": cache, "cv_cache_sha1": cache_sha1(cache)}
    return grid, None, info


def series_path(cfg, gamma):
    pot = cell_potential(cfg)
    delta = pot.param if cfg.dynamics == "langevin-2d" else 0.0
    name = "series_gamma%s" % format(gamma, "g")
    if cfg.dynamics == "langevin-2d":
        name += "_delta%s_dir%d" % (format(delta, "g"), cfg.direction)
    return os.path.join(cfg.outdir, name + ".csv")


SUMMARY_COLUMNS = ["gamma", "delta", "direction", "t_final", "replicas",
                   "n_failed", "d_hat", "std_v", "relstd", "d_psi"]


@dataclass
class SweepResult:
    ok: bool
    rows: list
    errors: list
    summary_path: str
    series_paths: list = field(default_factory=list)


def run_sweep(cfg):
    """Run every friction cell of a config and write CSV outputs."""
    os.makedirs(cfg.outdir, exist_ok=True)
    pot = cell_potential(cfg)
    delta = pot.param if cfg.dynamics == "langevin-2d" else 0.0
    rows = []
    errors = []
    paths = []
    profile_cache = {}
    for gamma in cfg.gammas:
        try:
            t_final = cfg.resolved_t_final(gamma)
            grid, gcv, cache_info = build_cell_cv(cfg, gamma, profile_cache)
            result = runner.run_cell(
                pot, dynamics=cfg.dynamics, beta=cfg.beta, gamma=gamma,
                nu=cfg.nu, dt=cfg.dt, t_final=t_final,
                snapshot_times=cfg.snapshot_times,
                n_replicas=cfg.replicas, master_seed=cfg.seed,
                grid=grid, gle_cv=gcv, direction=cfg.direction,
                batch_size=cfg.batch,
                workers=cfg.workers if cfg.workers > 0 else None)
        except Exception as exc:  # cell failure: record, keep sweeping
            errors.append({"gamma": gamma, "error": "%s: %s"
                           % (type(exc).__name__, exc)})
            rows.append({"gamma": gamma, "delta": delta,
                         "direction": cfg.direction, "t_final": math.nan,
                         "replicas": cfg.replicas, "n_failed": cfg.replicas,
                         "d_hat": math.nan, "std_v": math.nan,
                         "relstd": math.nan, "d_psi": math.nan})
            continue
        series = result.series
        meta = cfg.to_meta()
        meta.update(cache_info)
        meta["n_failed"] = result.n_failed
        meta["t_final_resolved"] = t_final
        path = series_path(cfg, gamma)
        write_series_csv(path, series, gamma=gamma, beta=cfg.beta,
                         delta=delta, cv_source=cv_label(cfg, grid, gcv),
                         seed=cfg.seed, header_meta=meta)
        paths.append(path)
        d_hat = float(series.mean_v[-1])
        std_v = float(series.std_v[-1])
        rows.append({"gamma": gamma, "delta": delta,
                     "direction": cfg.direction, "t_final": t_final,
                     "replicas": cfg.replicas, "n_failed": result.n_failed,
                     "d_hat": d_hat, "std_v": std_v,
                     "relstd": std_v / abs(d_hat) if d_hat != 0 else math.nan,
                     "d_psi": result.d_psi})
        if result.n_failed:
            errors.append({"gamma": gamma,
                           "error": "%d replicas diverged" % result.n_failed})
    summary = os.path.join(cfg.outdir, "summary.csv")
    write_summary_csv(summary, rows, cfg)
    return SweepResult(ok=not errors, rows=rows, errors=errors,
                       summary_path=summary, series_paths=paths)


def cv_label(cfg, grid, gcv):
    if grid is None and gcv is None:
        return "none"
    if gcv is not None:
        return "file"
    return grid.source


def write_summary_csv(path, rows, cfg):
    meta = cfg.to_meta()
    with open(path, "w", newline="") as fh:
        for key in sorted(meta):
            fh.write("# %s=%s\n" % (key, meta[key]))
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(row[c])) if isinstance(row[c], float)
                             else row[c] for c in SUMMARY_COLUMNS])


def read_csv_table(path):
    """Read one of our CSVs: returns (meta dict, dict of column arrays)."""
    meta = {}
    header = None
    data = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            row = next(csv.reader([line]))
            if header is None:
                header = row
            elif row:
                data.append(row)
    cols = {}
    for i, name in enumerate(header):
        vals = [r[i] for r in data]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals)
    return meta, cols


@dataclass
class FitResult:
    sigma_hat: float
    stderr: float
    slope: float
    intercept: float
    n_used: int
    cutoff: float


def fit_scaling(gammas, d_hats, cutoff=1e-2):
    """Least-squares slope of log D against log gamma below a cutoff.

    The reported exponent is sigma_hat = -slope, i.e. D ~ gamma^(-sigma).
    Cells with non-positive or non-finite D are excluded with a warning.
    """
    gammas = np.asarray(gammas, dtype=float)
    d_hats = np.asarray(d_hats, dtype=float)
    sel = gammas <= cutoff * (1 + 1e-12)
    good = sel & np.isfinite(d_hats) & (d_hats > 0)
    n_bad = int(sel.sum() - good.sum())
    if n_bad:
        warnings.warn("excluding %d cells with non-positive diffusion "
                      "estimates from the fit" % n_bad, RuntimeWarning)
    x = np.log(gammas[good])
    y = np.log(d_hats[good])
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 usable cells below the cutoff, "
                         "have %d" % n)
    xm = x.mean()
    ym = y.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    s2 = (resid ** 2).sum() / (n - 2)
    stderr = float(math.sqrt(s2 / sxx))
    return FitResult(sigma_hat=-slope, stderr=stderr, slope=slope,
                     intercept=intercept, n_used=n, cutoff=cutoff)


def fit_from_summary(summary_path, cutoff=None):
    meta, cols = read_csv_table(summary_path)
    if cutoff is None:
        cutoff = float(meta.get("config_cutoff", 1e-2))
    return fit_scaling(cols["gamma"], cols["d_hat"], cutoff=cutoff)


# ---------------------------------------------------------------------------
# plotting (deterministic SVG)
# ---------------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg", force=True)
    matplotlib.rcParams["svg.hashsalt"] = "effdiff"
    matplotlib.rcParams["svg.fonttype"] = "none"  # text stays text
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_scaling(summary_path, out_path, cutoff=None):
    """Log-log diffusion against friction, with the power-law fit."""
    plt = _plt()
    meta, cols = read_csv_table(summary_path)
    g = cols["gamma"]
    d = cols["d_hat"]
    err = 3.0 * cols["std_v"] / np.sqrt(np.maximum(
        cols["replicas"] - cols["n_failed"], 1.0))
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ok = np.isfinite(d) & (d > 0)
    ax.errorbar(g[ok], d[ok], yerr=err[ok], fmt="o", ms=4, capsize=2,
                label="estimate")
    fit = None
    if cutoff is None:
        cutoff = float(meta.get("config_cutoff", 1e-2))
    try:
        fit = fit_scaling(g, d, cutoff=cutoff)
    except ValueError:
        pass
    if fit is not None:
        gg = np.array([g[ok].min(), g[ok].max()])
        ax.plot(gg, np.exp(fit.intercept + fit.slope * np.log(gg)), "--",
                label="slope %.3f" % fit.slope)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"friction $\gamma$")
    ax.set_ylabel(r"effective diffusion $\widehat{D}$")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)
    plt.close(fig)
    return out_path


def plot_series(series_path, out_path):
    """u and v against time with shaded 3-sigma confidence bands."""
    plt = _plt()
    meta, cols = read_csv_table(series_path)
    t = cols["time"]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(t, cols["mean_u"], "-o", ms=3, label="plain")
    ax.fill_between(t, cols["mean_u"] - cols["ci_halfwidth_u"],
                    cols["mean_u"] + cols["ci_halfwidth_u"], alpha=0.25)
    cv_source = str(cols["cv_source"][0]) if "cv_source" in cols else "none"
    if cv_source != "none":
        ax.plot(t, cols["mean_v"], "-s", ms=3, label="controlled")
        ax.fill_between(t, cols["mean_v"] - cols["ci_halfwidth_v"],
                        cols["mean_v"] + cols["ci_halfwidth_v"], alpha=0.25)
    ax.set_xlabel("time")
    ax.set_ylabel("diffusion estimate")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)
    plt.close(fig)
    return out_path
