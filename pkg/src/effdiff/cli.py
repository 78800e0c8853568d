"""Command line interface.

Subcommands:
    solve-poisson      build a spectral control-variate table
    build-underdamped  build an energy-profile control-variate table
    run                run a single Monte Carlo cell
    sweep              run every friction value of a config
    fit                fit the low-friction scaling exponent
    plot               render SVG figures from CSV outputs

Every configuration key is also a flag; flags override the config
file, which overrides the defaults.
"""

import argparse
import math
import os
import sys
from dataclasses import fields, replace

from . import experiments, runner
from .estimators import write_series_csv
from .experiments import ExperimentConfig, load_config
from .gridcv import cache_sha1, save_cache
from .spectral import (assemble_generator_matrix, diffusion_from_spectral,
                       make_basis, solve_saddle)
from .underdamped import build_profile, limiting_diffusion


def _add_config_flags(parser):
    parser.add_argument("--config", help="key = value configuration file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = type(getattr(ExperimentConfig(), f.name))
        parser.add_argument(flag, type=kind, default=None,
                            dest="cfg_" + f.name)


def _build_config(args):
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    updates = {}
    for f in fields(ExperimentConfig):
        v = getattr(args, "cfg_" + f.name, None)
        if v is not None:
            updates[f.name] = v
    if updates:
        cfg = replace(cfg, **updates)
    return cfg


def _single_gamma(cfg):
    gs = cfg.gammas
    if len(gs) != 1:
        raise SystemExit("expected exactly one gamma, got %r" % (cfg.gamma,))
    return gs[0]


def cmd_solve_poisson(args):
    cfg = _build_config(args)
    gamma = _single_gamma(cfg)
    pot = experiments._base_potential_1d(cfg)
    params = experiments._preset_resolved(cfg)
    basis = make_basis(params["n_modes"], cfg.beta, gamma,
                       sigma=params["sigma"])
    amat = assemble_generator_matrix(basis, pot)
    sol = solve_saddle(amat, basis, pot)
    grid = experiments.export_to_grid(sol, pot, params["nq"],
                                      params["np_intervals"], params["lp"])
    out = args.out
    if out is None:
        os.makedirs(cfg.outdir, exist_ok=True)
        out = experiments._cv_cache_path(cfg, "galerkin", gamma)
    save_cache(grid, out)
    print("potential=%s gamma=%s modes=%d sigma=%g"
          % (pot.name, format(gamma, "g"), basis.n, basis.sigma))
    print("diffusion_prediction=%r" % diffusion_from_spectral(sol))
    print("quadratic_correction=%r" % float(grid.d_psi))
    print("residual_norm=%r" % sol.residual_norm)
    print("cache=%s sha1=%s" % (out, cache_sha1(out)))
    return 0


def cmd_build_underdamped(args):
    cfg = _build_config(args)
    gamma = _single_gamma(cfg)
    pot = experiments._base_potential_1d(cfg)
    params = experiments._preset_resolved(cfg)
    e_max = cfg.e_max if cfg.e_max > 0 else pot.vmax + 100.0 / cfg.beta
    profile = build_profile(pot, e_max)
    grid = experiments.export_profile_to_grid(
        profile, gamma, params["nq"], params["np_intervals"], params["lp"],
        cfg.beta)
    out = args.out
    if out is None:
        os.makedirs(cfg.outdir, exist_ok=True)
        out = experiments._cv_cache_path(cfg, "underdamped", gamma)
    save_cache(grid, out)
    print("potential=%s gamma=%s e_max=%g" % (pot.name, format(gamma, "g"),
                                              profile.e_max))
    print("limiting_gamma_d=%r" % float(limiting_diffusion(profile, cfg.beta)))
    print("quadratic_correction=%r" % float(grid.d_psi))
    print("cache=%s sha1=%s" % (out, cache_sha1(out)))
    return 0


def cmd_run(args):
    cfg = _build_config(args)
    gamma = _single_gamma(cfg)
    pot = experiments.cell_potential(cfg)
    delta = pot.param if cfg.dynamics == "langevin-2d" else 0.0
    t_final = cfg.resolved_t_final(gamma)
    grid, gcv, cache_info = experiments.build_cell_cv(cfg, gamma, {})
    result = runner.run_cell(
        pot, dynamics=cfg.dynamics, beta=cfg.beta, gamma=gamma, nu=cfg.nu,
        dt=cfg.dt, t_final=t_final, snapshot_times=cfg.snapshot_times,
        n_replicas=cfg.replicas, master_seed=cfg.seed, grid=grid,
        gle_cv=gcv, direction=cfg.direction, batch_size=cfg.batch,
        workers=cfg.workers if cfg.workers > 0 else None)
    os.makedirs(cfg.outdir, exist_ok=True)
    meta = cfg.to_meta()
    meta.update(cache_info)
    meta["n_failed"] = result.n_failed
    meta["t_final_resolved"] = t_final
    path = experiments.series_path(cfg, gamma)
    write_series_csv(path, result.series, gamma=gamma, beta=cfg.beta,
                     delta=delta,
                     cv_source=experiments.cv_label(cfg, grid, gcv),
                     seed=cfg.seed, header_meta=meta)
    s = result.series
    print("gamma=%s T=%g J=%d failed=%d" % (format(gamma, "g"), t_final,
                                            cfg.replicas, result.n_failed))
    print("d_hat=%r std=%r relstd=%r"
          % (float(s.mean_v[-1]), float(s.std_v[-1]),
             float(s.std_v[-1] / abs(s.mean_v[-1]))
             if s.mean_v[-1] != 0 else math.nan))
    print("series=%s" % path)
    return 0 if result.n_failed == 0 else 1


def cmd_sweep(args):
    cfg = _build_config(args)
    result = experiments.run_sweep(cfg)
    for row in result.rows:
        print("gamma=%s d_hat=%r std=%r failed=%d"
              % (format(row["gamma"], "g"), row["d_hat"], row["std_v"],
                 row["n_failed"]))
    for err in result.errors:
        print("error: gamma=%s %s" % (format(err["gamma"], "g"),
                                      err["error"]), file=sys.stderr)
    print("summary=%s" % result.summary_path)
    return 0 if result.ok else 1


def cmd_fit(args):
    fit = experiments.fit_from_summary(args.summary, cutoff=args.cutoff)
    print("sigma_hat=%r stderr=%r" % (fit.sigma_hat, fit.stderr))
    print("slope=%r intercept=%r n_used=%d cutoff=%g"
          % (fit.slope, fit.intercept, fit.n_used, fit.cutoff))
    return 0


def cmd_plot(args):
    os.makedirs(args.outdir, exist_ok=True)
    wrote = []
    if args.summary:
        out = os.path.join(args.outdir, "scaling.svg")
        experiments.plot_scaling(args.summary, out, cutoff=args.cutoff)
        wrote.append(out)
    for path in args.series or []:
        stem = os.path.splitext(os.path.basename(path))[0]
        out = os.path.join(args.outdir, stem + ".svg")
        experiments.plot_series(path, out)
        wrote.append(out)
    if not wrote:
        raise SystemExit("nothing to plot: pass --summary and/or --series")
    for w in wrote:
        print("wrote %s" % w)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="effdiff",
        description="Variance-reduced effective-diffusion estimation for "
                    "Langevin dynamics on the torus.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-poisson",
                       help="build and save a spectral control variate")
    _add_config_flags(p)
    p.add_argument("--out", help="cache file path")
    p.set_defaults(func=cmd_solve_poisson)

    p = sub.add_parser("build-underdamped",
                       help="build and save an energy-profile control "
                            "variate")
    _add_config_flags(p)
    p.add_argument("--out", help="cache file path")
    p.set_defaults(func=cmd_build_underdamped)

    p = sub.add_parser("run", help="run a single Monte Carlo cell")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a friction sweep")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit the low-friction scaling exponent")
    p.add_argument("--summary", required=True, help="summary.csv from sweep")
    p.add_argument("--cutoff", type=float, default=None,
                   help="use cells with gamma <= cutoff")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plot", help="render SVG figures")
    p.add_argument("--summary", help="summary.csv to plot")
    p.add_argument("--series", action="append",
                   help="series CSV to plot (repeatable)")
    p.add_argument("--cutoff", type=float, default=None)
    p.add_argument("--outdir", default="out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
