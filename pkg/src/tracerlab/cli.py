"""Command-line interface: synth, static, time, verify, and sweep runs.

Every run writes its artifacts plus a ``run.json`` manifest (resolved config,
seed, version, wall time, and a SHA-256 digest of each output file).  Exit
codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 statistical acceptance failure in verify.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as _rng
from .analysis import (
    delta_theta_check,
    delta_theta_sweep,
    ensemble_run,
    energy_shell_mean_exact,
    expected_dyadic_spectrum,
    slope_fit,
)
from .config import ConfigError, RunConfig, load_config
from .serialize import field_to_csv, vector_to_csv, write_json
from .spectral import SpectralField, get_lattice, l2_norm_sq, project_shell
from .static_solver import fixed_point_solve, first_iterate, residual
from .synthesis import synth_source, synth_velocity_static, velocity_path
from .time_solver import (
    TimeGrid,
    bracket_quadrature,
    correlation_series,
    duhamel_fixed_point,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_VERIFY_FAILED = 4


class _Manifest:
    def __init__(self, command: str, cfg: RunConfig, out_dir: Path, workers: int):
        self.start = time.time()
        self.data = {
            "command": command,
            "version": __version__,
            "seed": cfg.seed,
            "workers": workers,
            "exploratory": cfg.exploratory,
            "warnings": list(cfg.warnings),
            "config": cfg.resolved,
            "outputs": [],
        }
        self.out_dir = out_dir

    def add(self, path: Path):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.data["outputs"].append({"path": path.name, "sha256": digest})

    def write(self):
        self.data["wall_time_s"] = round(time.time() - self.start, 3)
        write_json(self.data, self.out_dir / "run.json")


def _out_dir(cfg: RunConfig, override) -> Path:
    path = Path(override) if override else Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_synth(cfg: RunConfig, out: Path, manifest: _Manifest) -> int:
    lattice = get_lattice(cfg.n)
    gamma = synth_source(cfg.source, lattice, _rng.stream(cfg.seed, 0, _rng.SOURCE_Z))
    modes = synth_velocity_static(cfg.velocity, lattice, _rng.stream(cfg.seed, 0, _rng.VEL_V))
    src_path = out / "source.csv"
    vel_path = out / "velocity.csv"
    field_to_csv(gamma, src_path)
    vector_to_csv(modes.field(), vel_path)
    manifest.add(src_path)
    manifest.add(vel_path)
    return EXIT_OK


def _cmd_static(cfg: RunConfig, out: Path, manifest: _Manifest) -> int:
    lattice = get_lattice(cfg.n)
    gamma = synth_source(cfg.source, lattice, _rng.stream(cfg.seed, 0, _rng.SOURCE_Z))
    modes = synth_velocity_static(cfg.velocity, lattice, _rng.stream(cfg.seed, 0, _rng.VEL_V))
    tol = cfg.tol if cfg.tol > 0 else None
    theta, diag = fixed_point_solve(modes, gamma, tol=tol, max_iter=cfg.max_iter)
    theta_path = out / "theta.csv"
    diag_path = out / "diagnostics.json"
    field_to_csv(theta, theta_path)
    write_json(diag.to_dict(), diag_path)
    manifest.add(theta_path)
    manifest.add(diag_path)
    if not diag.converged:
        print(
            f"static solve did not converge in {diag.iterations} iterations "
            f"(last increment {diag.increment_norms[-1]:.3e}); "
            "the amplitude is likely above the contraction threshold",
            file=sys.stderr,
        )
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _cmd_time(cfg: RunConfig, out: Path, manifest: _Manifest) -> int:
    lattice = get_lattice(cfg.n)
    gamma = synth_source(cfg.source, lattice, _rng.stream(cfg.seed, 0, _rng.SOURCE_Z))
    grid = TimeGrid(cfg.t_final, cfg.dt)
    path = velocity_path(
        cfg.velocity,
        cfg.correlation,
        lattice,
        _rng.stream(cfg.seed, 0, _rng.PATH_V),
        horizon=cfg.t_final,
    )
    theta, diag, criterion = duhamel_fixed_point(
        path, gamma, grid, tol=cfg.tol if cfg.tol > 0 else None, max_iter=cfg.max_iter
    )

    # dyad time series of the leading response along the same path
    ts_path = out / "timeseries.csv"
    vartheta = SpectralField.zeros(lattice)
    a = lattice.k2.astype(np.float64)
    from .time_solver import _etd_weights
    from .spectral import advect

    decay = np.exp(-a * grid.dt)
    phi0, phi1 = _etd_weights(a, grid.dt)
    acc = np.zeros(lattice.size, dtype=np.complex128)
    f_prev = advect(path.at(0.0), gamma).coeffs
    with open(ts_path, "w") as fh:
        fh.write("t,shell,kappa,value\n")
        for i in range(grid.n_steps):
            t_next = (i + 1) * grid.dt
            f_next = advect(path.at(t_next), gamma).coeffs
            acc = decay * acc + phi0 * f_prev + phi1 * f_next
            f_prev = f_next
            vt = SpectralField(lattice, acc)
            for shell, kappa in enumerate(cfg.kappas):
                val = l2_norm_sq(project_shell(vt, kappa, 2.0 * kappa))
                fh.write(f"{repr(t_next)},{shell},{repr(float(kappa))},{repr(val)}\n")
    manifest.add(ts_path)

    # limit-law report: series vs quadrature brackets for the probe modes
    probes = cfg.time_modes or tuple((0, 0, int(k)) for k in cfg.kappas if k >= 1)
    rows = []
    for kvec in probes:
        a_mode = float(sum(c * c for c in kvec))
        chi = float(cfg.correlation.chi(math.sqrt(a_mode)))
        if cfg.correlation.kind == "frozen" or chi == 0.0:
            bs = bq = 1.0
        else:
            bq = bracket_quadrature(a_mode, cfg.correlation, chi)
            bs = (
                correlation_series(a_mode, chi, cfg.correlation, n=cfg.series_order)
                if cfg.correlation.smooth
                else bq
            )
        rows.append(
            {
                "k": list(kvec),
                "a": a_mode,
                "chi": chi,
                "bracket_series": bs,
                "bracket_quadrature": bq,
                "abs_diff": abs(bs - bq),
            }
        )
    bj_path = out / "bracket.json"
    write_json(rows, bj_path)
    manifest.add(bj_path)
    bc_path = out / "bracket.csv"
    with open(bc_path, "w") as fh:
        fh.write("kx,ky,kz,a,chi,bracket_series,bracket_quadrature,abs_diff\n")
        for r in rows:
            fh.write(
                ",".join(
                    [str(r["k"][0]), str(r["k"][1]), str(r["k"][2])]
                    + [
                        repr(float(r[c]))
                        for c in ("a", "chi", "bracket_series", "bracket_quadrature", "abs_diff")
                    ]
                )
                + "\n"
            )
    manifest.add(bc_path)

    if not diag.converged:
        print(
            f"time-dependent iteration did not converge; convergence criterion "
            f"value {criterion:.3e} (must be < 1 for the guarantee)",
            file=sys.stderr,
        )
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _cmd_verify(cfg: RunConfig, out: Path, manifest: _Manifest, workers: int) -> int:
    report = ensemble_run(cfg, workers=workers)
    csv_path = out / "report.csv"
    json_path = out / "report.json"
    report.to_csv(csv_path)
    report.to_json(json_path)
    manifest.add(csv_path)
    manifest.add(json_path)
    failures = report.failures()
    for line in failures:
        print(f"verify: {line}", file=sys.stderr)
    return EXIT_VERIFY_FAILED if failures else EXIT_OK


def _cmd_sweep(cfg: RunConfig, out: Path, manifest: _Manifest) -> int:
    lattice = get_lattice(cfg.n)
    if cfg.sweep == "U":
        u_values = cfg.u_values or (0.2, 0.1, 0.05)
        records = delta_theta_sweep(
            lattice, cfg.velocity, cfg.source, u_values, cfg.kappas, seed=cfg.seed
        )
        fit = delta_theta_check(records)
        sw_path = out / "sweep.csv"
        with open(sw_path, "w") as fh:
            fh.write("U,kappa,remainder_norm_sq\n")
            for u, kappa, val in records:
                fh.write(f"{repr(float(u))},{repr(float(kappa))},{repr(float(val))}\n")
        fit_path = out / "fits.json"
        write_json(
            {"slope_U": fit.slope_u, "slope_kappa": fit.slope_kappa, "points": fit.n_points},
            fit_path,
        )
        manifest.add(sw_path)
        manifest.add(fit_path)
        return EXIT_OK
    if cfg.sweep == "kappa":
        rows = []
        for kappa in cfg.kappas:
            ed = expected_dyadic_spectrum(kappa, cfg.velocity, cfg.source, lattice)
            em = energy_shell_mean_exact(cfg.velocity, lattice, kappa)
            rows.append((kappa, ed, em, ed / em))
        fit = slope_fit([(math.log(k), math.log(r)) for k, _, _, r in rows])
        sw_path = out / "sweep.csv"
        with open(sw_path, "w") as fh:
            fh.write("kappa,expected_dyadic,energy_mean,ratio\n")
            for kappa, ed, em, ratio in rows:
                fh.write(",".join(repr(float(x)) for x in (kappa, ed, em, ratio)) + "\n")
        fit_path = out / "fits.json"
        write_json(
            {"ratio_slope": fit.slope, "ci": list(fit.ci), "intercept": fit.intercept},
            fit_path,
        )
        manifest.add(sw_path)
        manifest.add(fit_path)
        return EXIT_OK
    raise ConfigError(f"run.sweep must be 'U' or 'kappa', got {cfg.sweep!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tracerlab",
        description="Spectral Monte Carlo laboratory for passive-tracer spectra.",
    )
    parser.add_argument("command", choices=["synth", "static", "time", "verify", "sweep"])
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--workers", type=int, default=1, help="worker processes (no effect on outputs)")
    parser.add_argument("--exploratory", action="store_true", help="downgrade hypothesis violations to warnings")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    args = parser.parse_args(argv)

    try:
        overrides = {"mode": args.command}
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = load_config(args.config, exploratory=args.exploratory, overrides=overrides)
        cfg.resolved["run"]["mode"] = args.command
        cfg.resolved["run"]["seed"] = cfg.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = _out_dir(cfg, args.out)
    manifest = _Manifest(args.command, cfg, out, args.workers)
    try:
        if args.command == "synth":
            code = _cmd_synth(cfg, out, manifest)
        elif args.command == "static":
            code = _cmd_static(cfg, out, manifest)
        elif args.command == "time":
            code = _cmd_time(cfg, out, manifest)
        elif args.command == "verify":
            code = _cmd_verify(cfg, out, manifest, args.workers)
        else:
            code = _cmd_sweep(cfg, out, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest.write()
    return code


if __name__ == "__main__":
    sys.exit(main())
