"""Tests for the experiment layer: configs, sweeps, fits and plots."""

import math
import os
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from effdiff.experiments import (ExperimentConfig, FitResult, fit_from_summary,
                                 fit_scaling, load_config, parse_config_text,
                                 plot_scaling, plot_series, read_csv_table,
                                 run_sweep, series_path, write_summary_csv)


def make_cfg(outdir, **kw):
    """A small, fast sweep configuration on the flat potential."""
    base = dict(potential="zero", gamma="1.0,0.5", dt=0.01, t_final=2.0,
                snapshots="1.0", replicas=24, batch=8, seed=7, workers=1,
                outdir=str(outdir))
    base.update(kw)
    return replace(ExperimentConfig(), **base)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_parse_empty_text_gives_defaults():
    cfg = parse_config_text("")
    assert cfg == ExperimentConfig()


def test_parse_config_text_types_and_comments():
    text = """
    # a comment line
    potential = cosine
    beta = 2.5        # trailing comment
    gamma = 1.0,0.1,0.01

    replicas = 48
    """
    cfg = parse_config_text(text)
    assert cfg.potential == "cosine"
    assert cfg.beta == 2.5 and isinstance(cfg.beta, float)
    assert cfg.replicas == 48 and isinstance(cfg.replicas, int)
    assert cfg.gammas == (1.0, 0.1, 0.01)


def test_parse_config_unknown_key_reports_line():
    with pytest.raises(ValueError, match="line 2.*frobnicate"):
        parse_config_text("beta = 1.0\nfrobnicate = 3\n")


def test_parse_config_requires_key_value():
    with pytest.raises(ValueError, match="key = value"):
        parse_config_text("just some words\n")


def test_parse_config_base_override(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("gamma = 0.25\nreplicas = 10\n")
    base = load_config(str(path))
    assert base.gammas == (0.25,)
    # later text wins over the base, untouched keys survive
    cfg = parse_config_text("gamma = 0.125", base=base)
    assert cfg.gammas == (0.125,)
    assert cfg.replicas == 10


def test_gamma_list_ignores_empty_entries():
    cfg = replace(ExperimentConfig(), gamma="1.0,0.5,")
    assert cfg.gammas == (1.0, 0.5)


def test_snapshot_times_empty_and_parsed():
    assert ExperimentConfig().snapshot_times == ()
    cfg = replace(ExperimentConfig(), snapshots="1.0, 2.5")
    assert cfg.snapshot_times == (1.0, 2.5)


def test_to_meta_prefixes_every_field():
    meta = ExperimentConfig().to_meta()
    assert all(k.startswith("config_") for k in meta)
    assert meta["config_gamma"] == "1.0"
    assert meta["config_replicas"] == 1000
    # execution details stay out of the echo
    assert "config_workers" not in meta


# ---------------------------------------------------------------------------
# horizon rule
# ---------------------------------------------------------------------------

def test_resolved_t_final_fixed():
    cfg = replace(ExperimentConfig(), t_rule="fixed", t_final=37.5)
    assert cfg.resolved_t_final(1e-3) == 37.5


def test_resolved_t_final_over_gamma():
    cfg = replace(ExperimentConfig(), t_rule="100/gamma")
    assert_allclose(cfg.resolved_t_final(0.25), 400.0, rtol=0)
    spaced = replace(ExperimentConfig(), t_rule="2.5e2 / gamma")
    assert_allclose(spaced.resolved_t_final(0.5), 500.0, rtol=0)


def test_resolved_t_final_bad_rule():
    cfg = replace(ExperimentConfig(), t_rule="gamma/100")
    with pytest.raises(ValueError, match="t_rule"):
        cfg.resolved_t_final(1.0)
    cfg = replace(ExperimentConfig(), t_rule="100/gamma")
    with pytest.raises(ValueError, match="gamma > 0"):
        cfg.resolved_t_final(0.0)


def test_resolved_t_final_step_cap_warns():
    cfg = replace(ExperimentConfig(), t_rule="1e9/gamma", dt=1e-2)
    with pytest.warns(RuntimeWarning, match="capped"):
        t = cfg.resolved_t_final(1e-4)
    assert t == 1e8 * 1e-2


# ---------------------------------------------------------------------------
# scaling fit
# ---------------------------------------------------------------------------

def test_fit_scaling_recovers_exact_power_law():
    gammas = np.logspace(-4, -2, 6)
    d_hats = 2.3 * gammas ** (-0.75)
    fit = fit_scaling(gammas, d_hats, cutoff=1e-2)
    assert isinstance(fit, FitResult)
    assert_allclose(fit.sigma_hat, 0.75, rtol=1e-12)
    assert_allclose(fit.intercept, math.log(2.3), rtol=1e-10)
    assert fit.n_used == 6
    assert fit.stderr < 1e-12


def test_fit_scaling_cutoff_excludes_large_friction():
    gammas = np.array([1e-4, 1e-3, 1e-2, 0.1, 1.0])
    d_hats = 2.3 * gammas ** (-0.75)
    d_hats[3:] = 99.0  # garbage above the cutoff must not matter
    fit = fit_scaling(gammas, d_hats, cutoff=1e-2)
    assert fit.n_used == 3
    assert_allclose(fit.sigma_hat, 0.75, rtol=1e-12)


def test_fit_scaling_cutoff_boundary_is_inclusive():
    gammas = np.logspace(-3, 0, 7)  # last point is exactly 1.0
    d_hats = 0.8 * gammas ** (-1.0)
    fit = fit_scaling(gammas, d_hats, cutoff=1.0)
    assert fit.n_used == 7


def test_fit_scaling_excludes_bad_cells_with_warning():
    gammas = np.logspace(-4, -2, 6)
    d_hats = 2.3 * gammas ** (-0.75)
    d_hats[1] = math.nan
    d_hats[4] = -0.3
    with pytest.warns(RuntimeWarning, match="excluding 2 cells"):
        fit = fit_scaling(gammas, d_hats, cutoff=1e-2)
    assert fit.n_used == 4
    assert_allclose(fit.sigma_hat, 0.75, rtol=1e-12)


def test_fit_scaling_needs_three_cells():
    with pytest.raises(ValueError, match="at least 3"):
        fit_scaling([1e-3, 1e-2], [10.0, 5.0], cutoff=1e-2)


def test_fit_scaling_noisy_recovery():
    rng = np.random.default_rng(11)
    gammas = np.logspace(-5, -2, 12)
    d_hats = 1.7 * gammas ** (-0.5) * np.exp(0.01 * rng.standard_normal(12))
    fit = fit_scaling(gammas, d_hats, cutoff=1e-2)
    assert fit.stderr > 0
    assert abs(fit.sigma_hat - 0.5) < 3 * fit.stderr + 0.02


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_run_sweep_flat_potential(tmp_path):
    cfg = make_cfg(tmp_path / "out")
    res = run_sweep(cfg)
    assert res.ok
    assert res.errors == []
    assert os.path.exists(res.summary_path)
    assert [os.path.basename(p) for p in res.series_paths] == [
        "series_gamma1.csv", "series_gamma0.5.csv"]
    assert all(os.path.exists(p) for p in res.series_paths)

    meta, cols = read_csv_table(res.summary_path)
    assert meta["config_gamma"] == "1.0,0.5"
    assert meta["config_replicas"] == "24"
    assert_allclose(cols["gamma"], [1.0, 0.5], rtol=0)
    assert np.all(cols["replicas"] == 24)
    assert np.all(cols["n_failed"] == 0)
    assert np.all(np.isfinite(cols["d_hat"]))
    # no control variate: the quadratic correction vanishes
    assert_allclose(cols["d_psi"], 0.0, atol=0)

    smeta, scols = read_csv_table(res.series_paths[0])
    assert smeta["n_failed"] == "0"
    assert smeta["t_final_resolved"] == "2.0"
    assert list(scols["time"]) == [1.0, 2.0]
    assert scols["cv_source"][0] == "none"


def test_run_sweep_deterministic_bytes(tmp_path, monkeypatch):
    blobs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        monkeypatch.chdir(d)
        res = run_sweep(make_cfg("out"))
        with open(res.summary_path, "rb") as fh:
            summary = fh.read()
        with open(res.series_paths[0], "rb") as fh:
            series = fh.read()
        blobs.append((summary, series))
    assert blobs[0] == blobs[1]


def test_run_sweep_galerkin_cell_and_file_reuse(tmp_path):
    out = tmp_path / "out"
    cfg = make_cfg(out, potential="cosine", gamma="1.0", t_final=1.0,
                   snapshots="", replicas=16, cv="galerkin", n_modes=16,
                   nq=32, np_intervals=16, lp=6.0)
    res = run_sweep(cfg)
    assert res.ok
    cache = out / "cv_galerkin_cosine_gamma1.bin"
    assert cache.exists()

    meta, cols = read_csv_table(res.series_paths[0])
    assert meta["cv_cache_file"] == str(cache)
    assert len(meta["cv_cache_sha1"]) == 40
    assert cols["cv_source"][0] == "galerkin"
    d_psi_unit = res.rows[0]["d_psi"]
    assert d_psi_unit > 0

    # reuse the exported table at a different friction: the quadratic
    # correction is linear in gamma
    reuse = make_cfg(tmp_path / "out2", potential="cosine", gamma="0.5",
                     t_final=1.0, snapshots="", replicas=16, cv="file",
                     cv_file=str(cache))
    res2 = run_sweep(reuse)
    assert res2.ok
    assert_allclose(res2.rows[0]["d_psi"], 0.5 * d_psi_unit, rtol=1e-12)
    meta2, cols2 = read_csv_table(res2.series_paths[0])
    # the label keeps the table's origin; the config echo records the route
    assert cols2["cv_source"][0] == "galerkin"
    assert meta2["config_cv"] == "file"


def test_run_sweep_records_cell_failures(tmp_path):
    # gamma = 0 breaks the horizon rule; the sweep must finish anyway
    cfg = make_cfg(tmp_path / "out", gamma="1.0,0", t_rule="2/gamma")
    res = run_sweep(cfg)
    assert not res.ok
    assert len(res.errors) == 1
    assert res.errors[0]["gamma"] == 0.0
    assert "ValueError" in res.errors[0]["error"]

    assert len(res.rows) == 2
    assert math.isfinite(res.rows[0]["d_hat"])
    assert math.isnan(res.rows[1]["d_hat"])
    assert res.rows[1]["n_failed"] == cfg.replicas
    # only the successful cell produced a series file
    assert len(res.series_paths) == 1

    _, cols = read_csv_table(res.summary_path)
    assert len(cols["gamma"]) == 2
    assert math.isnan(cols["d_hat"][1])


def test_run_sweep_missing_cv_file_fails_cleanly(tmp_path):
    cfg = make_cfg(tmp_path / "out", cv="file",
                   cv_file=str(tmp_path / "nope.bin"))
    res = run_sweep(cfg)
    assert not res.ok
    assert len(res.errors) == 2  # one per friction cell
    assert os.path.exists(res.summary_path)


# ---------------------------------------------------------------------------
# summary round trips and fits from files
# ---------------------------------------------------------------------------

def synthetic_summary(path, gammas, d_hats, cutoff=1e-2):
    cfg = replace(ExperimentConfig(), cutoff=cutoff)
    rows = [dict(gamma=float(g), delta=0.0, direction=0, t_final=100.0,
                 replicas=100, n_failed=0, d_hat=float(d), std_v=0.1 * float(d),
                 relstd=0.1, d_psi=0.0)
            for g, d in zip(gammas, d_hats)]
    write_summary_csv(str(path), rows, cfg)
    return str(path)


def test_fit_from_summary_uses_config_cutoff(tmp_path):
    gammas = np.logspace(-4, -1, 8)
    d_hats = 0.9 * gammas ** (-1.0)
    path = synthetic_summary(tmp_path / "summary.csv", gammas, d_hats,
                             cutoff=1e-2)
    fit = fit_from_summary(path)
    assert fit.cutoff == 1e-2
    assert fit.n_used == int((gammas <= 1e-2 * (1 + 1e-12)).sum())
    assert_allclose(fit.sigma_hat, 1.0, rtol=1e-12)
    # explicit cutoff wins over the stored one
    wide = fit_from_summary(path, cutoff=1.0)
    assert wide.n_used == 8


def test_summary_float_round_trip(tmp_path):
    gammas = [1e-3, 1e-2 / 3.0, 0.1]
    d_hats = [math.pi, math.e, 0.1 + 0.2]
    path = synthetic_summary(tmp_path / "summary.csv", gammas, d_hats)
    _, cols = read_csv_table(path)
    assert list(cols["gamma"]) == gammas  # repr() round-trips exactly
    assert list(cols["d_hat"]) == d_hats


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def test_plot_scaling_deterministic_svg(tmp_path):
    gammas = np.logspace(-3, 0, 7)
    d_hats = 0.8 * gammas ** (-0.6)
    summary = synthetic_summary(tmp_path / "summary.csv", gammas, d_hats,
                                cutoff=1.0)
    out1 = str(tmp_path / "scaling1.svg")
    out2 = str(tmp_path / "scaling2.svg")
    plot_scaling(summary, out1)
    plot_scaling(summary, out2)
    with open(out1, "rb") as fh:
        b1 = fh.read()
    with open(out2, "rb") as fh:
        b2 = fh.read()
    assert b1 == b2
    assert b"slope" in b1  # the fit line made it onto the figure


def test_plot_scaling_survives_unfittable_summary(tmp_path):
    summary = synthetic_summary(tmp_path / "summary.csv", [0.5, 1.0],
                                [2.0, 1.0], cutoff=1e-2)
    out = str(tmp_path / "scaling.svg")
    plot_scaling(summary, out)
    with open(out, "rb") as fh:
        blob = fh.read()
    assert b"slope" not in blob


def test_plot_series_shows_control_only_when_present(tmp_path):
    plain = run_sweep(make_cfg(tmp_path / "plain"))
    controlled = run_sweep(make_cfg(tmp_path / "ctrl", potential="cosine",
                                    gamma="1.0", replicas=16, cv="galerkin",
                                    n_modes=16, nq=32, np_intervals=16,
                                    lp=6.0))
    out_plain = str(tmp_path / "plain.svg")
    out_ctrl = str(tmp_path / "ctrl.svg")
    plot_series(plain.series_paths[0], out_plain)
    plot_series(controlled.series_paths[0], out_ctrl)
    with open(out_plain, "rb") as fh:
        blob_plain = fh.read()
    with open(out_ctrl, "rb") as fh:
        blob_ctrl = fh.read()
    assert b"controlled" not in blob_plain
    assert b"controlled" in blob_ctrl


def test_series_path_naming_2d(tmp_path):
    cfg = make_cfg(tmp_path, dynamics="langevin-2d", potential="cos2d",
                   param=0.25, direction=1)
    assert os.path.basename(series_path(cfg, 0.1)) == \
        "series_gamma0.1_delta0.25_dir1.csv"
