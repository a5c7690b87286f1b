"""Command-line orchestration: config ingestion, pipeline caching, and CSV
emission of the density, region, filter, and comparison products.

Subcommands: density | design | compare | validate, each taking
--config <path> --output <dir> [--threads n] [--force].
Exit codes: 0 success, 1 numerical failure, 2 config error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import girko_k25, spectral_empirical
from .consensus_sim import compare_filters, error_trajectory, run_consensus
from .errors import SpectralConsensusError, InvalidInputError
from .filter_design import (
    build_q,
    design_filter,
    extract_region,
    sample_region,
)
from .girko_k25 import (
    GeneralModel,
    ScalarModel,
    integrate_density,
    map_xi_density_to_w,
    solve_general_ce,
    solve_scalar_ce,
    compute_m,
)
from .graph_models import (
    SbmConfig,
    expanded_variance_matrix,
    mean_adjacency,
    mean_spectrum,
    variance_profile,
)
from .grids import DensityGrid, GridSpec, l1_distance
from .spectral_empirical import eigenvalues, expected_density_mc, left_perron

__all__ = ["main", "RunConfig", "load_config"]


@dataclass
class RunConfig:
    model: SbmConfig
    grid: GridSpec
    kappa: float = 1e-2
    tau: float = 1e-4
    degrees: tuple = (1, 2, 3, 4, 5, 6)
    max_points: int = 1000
    design_tol: float = 1e-6
    trials: int = 1000
    n_iters: int = 60
    base_seed: int = 0

    def model_dict(self) -> dict:
        return {
            "M": self.model.M, "S": self.model.S,
            "Theta": self.model.Theta.tolist(), "alpha": self.model.alpha,
        }

    def section_dict(self, *parts: str) -> dict:
        out = {}
        if "model" in parts:
            out["model"] = self.model_dict()
        if "grid" in parts:
            out["grid"] = self.grid.to_dict()
        if "region" in parts:
            out["region"] = {"kappa": self.kappa, "tau": self.tau}
        if "design" in parts:
            out["design"] = {"degrees": list(self.degrees),
                             "max_points": self.max_points,
                             "tol": self.design_tol}
        if "sim" in parts:
            out["sim"] = {"trials": self.trials, "n_iters": self.n_iters,
                          "base_seed": self.base_seed}
        return out


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise InvalidInputError(f"cannot read config file {path}")
    if "model" not in parser:
        raise InvalidInputError("config needs a [model] section")
    m = parser["model"]
    M = m.getint("M")
    S = m.getint("S")
    alpha = m.getfloat("alpha", fallback=1.0)
    if M is None or S is None:
        raise InvalidInputError("model.M and model.S are required")
    if "theta" in m:
        rows = [[float(v) for v in row.split(",")]
                for row in m["theta"].split(";")]
        Theta = np.asarray(rows)
        model = SbmConfig(M=M, S=S, Theta=Theta, alpha=alpha)
    else:
        model = SbmConfig.two_level(
            M, S, m.getfloat("theta_diag"), m.getfloat("theta_off"), alpha)
    g = parser["grid"] if "grid" in parser else {}

    def gf(key, default):
        return float(g.get(key, default)) if hasattr(g, "get") else default

    grid = GridSpec(
        t_min=gf("t_min", -0.6), t_max=gf("t_max", 1.2),
        n_t=int(gf("n_t", 101)),
        s_min=gf("s_min", -0.6), s_max=gf("s_max", 0.6),
        n_s=int(gf("n_s", 101)),
        beta=gf("beta", 1e-6), u_max=gf("u_max", 1e3),
        n_u=int(gf("n_u", 96)))
    r = parser["region"] if "region" in parser else {}
    d = parser["design"] if "design" in parser else {}
    s_ = parser["sim"] if "sim" in parser else {}
    degrees = d.get("degrees", "1,2,3,4,5,6") if hasattr(d, "get") else "1,2,3,4,5,6"
    base_seed = None
    if hasattr(s_, "get") and s_.get("base_seed") is not None:
        base_seed = int(s_.get("base_seed"))
    elif m.get("seed") is not None:
        base_seed = int(m.get("seed"))
    return RunConfig(
        model=model, grid=grid,
        kappa=float(r.get("kappa", 1e-2)) if hasattr(r, "get") else 1e-2,
        tau=float(r.get("tau", 1e-4)) if hasattr(r, "get") else 1e-4,
        degrees=tuple(int(x) for x in degrees.split(",")),
        max_points=int(d.get("max_points", 1000)) if hasattr(d, "get") else 1000,
        design_tol=float(d.get("tol", 1e-6)) if hasattr(d, "get") else 1e-6,
        trials=int(s_.get("trials", 1000)) if hasattr(s_, "get") else 1000,
        n_iters=int(s_.get("n_iters", 60)) if hasattr(s_, "get") else 60,
        base_seed=base_seed if base_seed is not None else 0)


# ---------------------------------------------------------------------------
# caching
# ---------------------------------------------------------------------------

def _cache_key(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _cache_dir(output: Path, key: str) -> Path:
    return output / "cache" / key


def _cached(output: Path, key: str, names, builder, force: bool):
    """Build files under the cache key (or reuse) and copy them to output."""
    cdir = _cache_dir(output, key)
    manifest = cdir / "manifest.json"
    if force or not manifest.exists():
        cdir.mkdir(parents=True, exist_ok=True)
        builder(cdir)
        with open(manifest, "w") as fh:
            json.dump({"key": key, "files": list(names)}, fh, indent=2)
        hit = False
    else:
        hit = True
        print(f"cache hit: {key}")
    for name in names:
        shutil.copyfile(cdir / name, output / name)
    return hit


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------

def scalar_model_for(config: SbmConfig,
                     deflate_consensus: bool = False) -> ScalarModel:
    """Scalar canonical-equation model for the scaled adjacency.

    With ``deflate_consensus`` the top mean eigenvalue (the one the
    iteration map sends to the consensus eigenvalue 1) is replaced by the
    preimage of 0, which is the spectrum of the projector-deflated matrix.
    Region extraction uses this variant: the consensus eigenvalue is
    removed analytically by the projector subtraction, so its near-singular
    spike must not claim filtering-region cells around 1.
    """
    spec = mean_spectrum(config, scaled=True)
    if deflate_consensus:
        eigs = spec.eigenvalues.copy()
        mults = spec.multiplicities.copy()
        k = int(np.argmax(eigs))
        eigs[k] = 1.0 - 1.0 / config.alpha
        from .graph_models import MeanSpectrum

        spec = MeanSpectrum(eigs, mults)
    prof = variance_profile(config, scaled=True)
    return ScalarModel(spectrum=spec, row_var=prof.row_sum)


def xi_source_grid(grid: GridSpec, alpha: float) -> GridSpec:
    """Preimage of the W-plane grid under lambda -> 1 - alpha + alpha*lambda."""
    if alpha == 1.0:
        return grid
    return GridSpec(
        t_min=(grid.t_min - 1.0) / alpha + 1.0,
        t_max=(grid.t_max - 1.0) / alpha + 1.0,
        n_t=grid.n_t,
        s_min=grid.s_min / alpha, s_max=grid.s_max / alpha, n_s=grid.n_s,
        beta=grid.beta, u_max=grid.u_max, n_u=grid.n_u)


def girko_w_density(cfg: RunConfig, threads: int = 1,
                    deflate_consensus: bool = False) -> DensityGrid:
    """Deterministic density of the iteration matrix on the requested grid."""
    model = scalar_model_for(cfg.model, deflate_consensus=deflate_consensus)
    source = xi_source_grid(cfg.grid, cfg.model.alpha)
    dens_xi = integrate_density(model, source, threads=threads)
    out = map_xi_density_to_w(dens_xi, cfg.model.alpha)
    out.meta["deflate_consensus"] = deflate_consensus
    return out


def _write_girko(cdir: Path, cfg: RunConfig, threads: int,
                 deflate_consensus: bool = False):
    stem = "girko_deflated" if deflate_consensus else "girko_density"
    dens = girko_w_density(cfg, threads=threads,
                           deflate_consensus=deflate_consensus)
    dens.write_csv(cdir / f"{stem}.csv")
    dens.write_meta(cdir / f"{stem}_meta.json")


def _write_empirical(cdir: Path, cfg: RunConfig, threads: int):
    dens, report = expected_density_mc(
        cfg.model, cfg.trials, cfg.grid, cfg.base_seed, threads=threads)
    dens.write_csv(cdir / "empirical_density.csv")
    dens.write_meta(cdir / "empirical_density_meta.json",
                    extra={"per_trial": report.trials})


def _load_girko(output: Path, stem: str = "girko_density") -> DensityGrid:
    dens = DensityGrid.from_csv(output / f"{stem}.csv")
    with open(output / f"{stem}_meta.json") as fh:
        dens.meta = json.load(fh)
    return dens


def _girko_cached(cfg: RunConfig, output: Path, threads: int, force: bool,
                  deflated: bool) -> DensityGrid:
    stem = "girko_deflated" if deflated else "girko_density"
    payload = cfg.section_dict("model", "grid")
    payload["kind"] = stem
    key = _cache_key(payload)
    _cached(output, key, [f"{stem}.csv", f"{stem}_meta.json"],
            lambda cdir: _write_girko(cdir, cfg, threads, deflated), force)
    dens = _load_girko(output, stem)
    dens.meta["cache_key"] = key
    return dens


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_density(cfg: RunConfig, output: Path, threads: int, force: bool) -> int:
    girko = _girko_cached(cfg, output, threads, force, deflated=False)
    report = {"girko_key": girko.meta.get("cache_key"),
              "girko_meta": girko.meta}

    if cfg.trials > 0:
        ekey = _cache_key(cfg.section_dict("model", "grid", "sim"))
        _cached(output, ekey,
                ["empirical_density.csv", "empirical_density_meta.json"],
                lambda cdir: _write_empirical(cdir, cfg, threads), force)
        empirical = DensityGrid.from_csv(output / "empirical_density.csv")
        report["empirical_key"] = ekey
        keep = _consensus_mask(girko, cfg.kappa)
        diff = np.nansum(np.abs(np.where(keep, girko.values - empirical.values,
                                         0.0))) * girko.cell_area
        report["l1_distance_excl_consensus"] = float(diff)
        report["l1_per_area_excl_consensus"] = float(diff / girko.grid_area())

    # the outlined filtering region comes from the projector-deflated
    # density, where the consensus spike carries no mass
    deflated = _girko_cached(cfg, output, threads, force, deflated=True)
    region = extract_region(deflated, cfg.kappa, cfg.tau)
    with open(output / "region_boundary.csv", "w") as fh:
        fh.write(region.boundary_csv())
    report["region_cells"] = region.cell_count
    with open(output / "density_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return 0


def _consensus_mask(density: DensityGrid, kappa: float) -> np.ndarray:
    T, S = density.node_mesh()
    return (T - 1.0) ** 2 + S ** 2 > kappa ** 2


def cmd_design(cfg: RunConfig, output: Path, threads: int, force: bool) -> int:
    deflated = _girko_cached(cfg, output, threads, force, deflated=True)
    region = extract_region(deflated, cfg.kappa, cfg.tau)
    pts = sample_region(region, max_points=cfg.max_points)
    for d in cfg.degrees:
        filt = design_filter(pts.points, d, tol=cfg.design_tol)
        filt.meta.update({
            "region_cells": region.cell_count,
            "sample_points": pts.count,
            "kappa": cfg.kappa, "tau": cfg.tau,
            "density_key": deflated.meta.get("cache_key"),
        })
        with open(output / f"filter_d{d}.json", "w") as fh:
            fh.write(filt.to_json())
            fh.write("\n")
    return 0


def cmd_compare(cfg: RunConfig, output: Path, threads: int, force: bool) -> int:
    deflated = _girko_cached(cfg, output, threads, force, deflated=True)
    table = compare_filters(
        cfg.model, deflated, cfg.kappa, cfg.tau, cfg.degrees, cfg.trials,
        cfg.base_seed, design_tol=cfg.design_tol, max_points=cfg.max_points,
        threads=threads)
    with open(output / "comparison.csv", "w") as fh:
        fh.write(table.to_csv())
    with open(output / "trial_report.txt", "w") as fh:
        fh.write(f"failed_trials {table.failed_trials}\n")
        for entry in table.trial_report:
            fh.write(f"trial {entry['trial']} seed {entry['seed']} "
                     f"connected {int(entry['connected'])}\n")
    return 0


def cmd_validate(cfg: RunConfig, output: Path, threads: int, force: bool) -> int:
    checks = []
    rng = np.random.default_rng(0)

    # PSD probes and the quadratic response identity
    min_eig = np.inf
    worst_identity = 0.0
    for _ in range(1000):
        lam = complex(rng.normal(), rng.normal())
        d = int(rng.integers(1, 7))
        Q = build_q(lam, d)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(Q).min()))
        a = rng.normal(size=d + 1)
        p = np.polyval(a[::-1], lam)
        worst_identity = max(worst_identity,
                             abs(float(a @ Q @ a) - abs(p) ** 2))
    checks.append(("q_psd_min_eigenvalue", min_eig >= -1e-12, f"{min_eig:.3e}"))
    checks.append(("quadratic_identity", worst_identity <= 1e-10,
                   f"{worst_identity:.3e}"))

    # spectral mapping on small random matrices
    worst_map = 0.0
    for _ in range(20):
        Wm = rng.normal(size=(8, 8)) / 4.0
        ev = np.linalg.eigvals(Wm)
        mapped = np.sort_complex(ev ** 2 + ev)
        direct = np.sort_complex(np.linalg.eigvals(Wm @ Wm + Wm))
        worst_map = max(worst_map, float(np.abs(mapped - direct).max()))
    checks.append(("spectral_mapping", worst_map <= 1e-8, f"{worst_map:.3e}"))

    # filter normalization on a few designed instances
    th = np.linspace(0.0, np.pi, 60)
    disk_pts = 0.3 * np.exp(1j * th)
    norm_err = 0.0
    for d in (1, 2, 3):
        filt = design_filter(disk_pts, d, tol=1e-6)
        norm_err = max(norm_err, abs(filt.coefficients.sum() - 1.0))
    checks.append(("filter_normalization", norm_err <= 1e-12, f"{norm_err:.3e}"))

    # canonical-equation positivity plus scalar/general agreement at N=60
    small = SbmConfig.two_level(6, 10, 0.05, 0.01, alpha=1.0)
    model = scalar_model_for(small)
    gamma_b = mean_adjacency(small).dense() / _gamma_of(small)
    sigma2 = expanded_variance_matrix(small, scaled=True)
    worst_m = 0.0
    positive = True
    for t in (-0.2, 0.05, 0.6):
        for s in (0.0, 0.1, 0.4):
            warm = None
            warm_s = None
            for u in (10.0, 0.1, 1e-3):
                sol_g = solve_general_ce(gamma_b, sigma2, u, t, s,
                                         tol=1e-12, warm=warm)
                warm = (sol_g.C1_diag, sol_g.C2_diag)
                sol_s = solve_scalar_ce(model.spectrum, model.row_var, u, t, s,
                                        tol=1e-12, warm=warm_s)
                warm_s = (sol_s.c1, sol_s.c2)
                positive &= sol_s.c1 > 0 and sol_s.c2 > 0
                positive &= bool((sol_g.C1_diag > 0).all()
                                 and (sol_g.C2_diag > 0).all())
                mg = compute_m(sol_g, GeneralModel(B=gamma_b, sigma2=sigma2), t, s)
                ms = compute_m(sol_s, model, t, s)
                worst_m = max(worst_m, abs(mg - ms))
    checks.append(("ce_positivity", positive, ""))
    checks.append(("scalar_general_agreement", worst_m <= 1e-6, f"{worst_m:.3e}"))

    # circular-law recovery on a coarse grid
    from .graph_models import MeanSpectrum

    circ_model = ScalarModel(
        spectrum=MeanSpectrum(np.array([0.0]), np.array([1000])), row_var=1.0)
    circ_grid = GridSpec(-1.5, 1.5, 41, -1.5, 1.5, 41)
    dens = integrate_density(circ_model, circ_grid, threads=threads)
    T, S = dens.node_mesh()
    ideal = ((T ** 2 + S ** 2) <= 1.0) / np.pi
    l1 = float(np.nansum(np.abs(dens.values - ideal)) * dens.cell_area)
    checks.append(("circular_law_l1", l1 <= 0.1, f"{l1:.4f}"))

    # window form equals matrix-polynomial form; weighted average conserved
    from .filter_design import Filter

    Wm = rng.random((20, 20)) + 0.1
    Wm = Wm / Wm.sum(axis=1)[:, None]
    filt = Filter(degree=2, coefficients=np.array([0.2, 0.3, 0.5]),
                  achieved_epsilon=float("nan"))
    x0 = rng.normal(size=20)
    t_win = run_consensus(Wm, x0, filt, 12, mode="window")
    t_mat = run_consensus(Wm, x0, filt, 12, mode="matrix")
    form_gap = float(np.max(np.abs(t_win.states - t_mat.states)))
    checks.append(("window_matrix_agreement", form_gap <= 1e-12,
                   f"{form_gap:.3e}"))
    proj = left_perron(Wm)
    avg = t_win.states @ proj.ell
    cons_gap = float(np.max(np.abs(avg - avg[0])))
    checks.append(("consensus_average_conserved", cons_gap <= 1e-10,
                   f"{cons_gap:.3e}"))

    ok = True
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}"
              + (f" ({detail})" if detail else ""))
        ok &= passed
    return 0 if ok else 1


def _gamma_of(config: SbmConfig) -> float:
    from .graph_models import scaling_gamma

    return scaling_gamma(config)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(str(type(obj)))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spectral-consensus",
        description="Density approximation and filter design for consensus "
                    "on directed random networks")
    parser.add_argument("command",
                        choices=["density", "design", "compare", "validate"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--output", required=True)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--force", action="store_true",
                        help="ignore cached products")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (SpectralConsensusError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    output = Path(args.output)
    output.mkdir(parents=True, exist_ok=True)
    dispatch = {"density": cmd_density, "design": cmd_design,
                "compare": cmd_compare, "validate": cmd_validate}
    try:
        return dispatch[args.command](cfg, output, args.threads, args.force)
    except SpectralConsensusError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
