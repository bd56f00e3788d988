"""Command-line entry point: run modes from a configuration file.

    renewal-lab <mode> --config <path> [--out <dir>]
                [--paper-literal-boundary] [--eps <value>]

Modes: eigen, simulate, simulate-mutation, decompose, adaptive, hjb,
full-report.  Every run writes its artifacts plus a ``manifest.txt``
listing each output file with its SHA-256 checksum and byte size.  Exit
status: 0 success, 1 configuration/validation failure, 2 numerical
failure.

Data CSVs carry 17 significant digits (bit round-trip); plot-data files
(isoline matrices, concentration slices) carry 9.  The environment
variable RENEWAL_THREADS caps the worker count of the eigen assembly.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import warnings
from pathlib import Path

import numpy as np

from . import adaptive as ad
from .config import MODES, ConfigError, RunConfig, load_config
from .decomposition import ProfileTracker
from .eigen import EigenError, solve_field
from .hjb import CertificationError, solve_hj, viscosity_limit_study
from .model import validate_assumptions
from .quadrature import trapezoid_weights
from .transport import InstabilityError, Trajectory, run_simulation

DATA_FMT = "%.17g"
PLOT_FMT = "%.9g"


class _Emitter:
    """Writes artifact files and keeps the manifest ledger."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def _register(self, path: Path):
        self.files.append(path)

    def write_csv(self, name: str, header: list[str], columns,
                  fmt: str = DATA_FMT):
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = [np.asarray(c) for c in columns]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in zip(*cols):
                fh.write(",".join(fmt % v for v in row) + "\n")
        self._register(path)

    def write_matrix(self, name: str, matrix: np.ndarray, fmt: str = PLOT_FMT):
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for row in np.asarray(matrix):
                fh.write(" ".join(fmt % v for v in row) + "\n")
        self._register(path)

    def write_text(self, name: str, text: str):
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self._register(path)

    def write_manifest(self):
        lines = []
        for path in sorted(self.files):
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            rel = path.relative_to(self.out_dir)
            lines.append(f"{digest}  {path.stat().st_size}  {rel}")
        (self.out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _fmt_time(t: float) -> str:
    return ("%.6f" % t).rstrip("0").rstrip(".").replace(".", "p").replace("-", "m")


def _emit_eigen(cfg: RunConfig, em: _Emitter):
    field = solve_field(cfg.model, cfg.grid)
    em.write_csv("lambda.csv",
                 ["y", "lambda", "grad_lambda", "d_eta_lambda"],
                 [field.y, field.lam, field.grad_lam, field.d_eta_lam])
    for j in range(len(field.y)):
        if not field.solvable[j]:
            continue
        em.write_csv(f"profiles/profile_{j:04d}.csv", ["x", "Q", "Phi"],
                     [field.x, field.Q[j], field.Phi[j]])
    return field


def _emit_run(cfg: RunConfig, em: _Emitter, kernel=None) -> Trajectory:
    traj = run_simulation(cfg.model, cfg.grid, cfg.init, cfg.T,
                          kernel=kernel,
                          snapshot_interval=cfg.snapshot_interval,
                          paper_literal_boundary=cfg.paper_literal_boundary)
    em.write_csv("rho.csv", ["t", "rho"], [traj.rho_times, traj.rho_values])
    g = cfg.grid
    xs = np.repeat(g.x, len(g.y))
    ys = np.tile(g.y, len(g.x))
    for t, snap in zip(traj.times, traj.snapshots):
        tag = _fmt_time(t)
        em.write_csv(f"snapshot_t{tag}.csv", ["x", "y", "m"],
                     [xs, ys, snap.m.ravel()])
        em.write_matrix(f"isolines_t{tag}.dat", snap.m)
    return traj


def _emit_decomposition(cfg: RunConfig, em: _Emitter, field, traj):
    tracker = ProfileTracker(cfg.grid, cfg.init, field)
    records = tracker.analyze(traj)
    for rec in records:
        tag = _fmt_time(rec.t)
        em.write_csv(f"potential_t{tag}.csv", ["y", "u", "entropy"],
                     [cfg.grid.y, rec.u, rec.entropy])
    em.write_csv("mask_fraction.csv", ["t", "mask_fraction"],
                 [[r.t for r in records], [r.mask_fraction for r in records]])
    matrix = np.column_stack([np.array([r.t for r in records])]
                             + [np.array([r.entropy[j] for r in records])
                                for j in range(len(cfg.grid.y))])
    em.write_matrix("entropy_matrix.dat", matrix)
    return tracker, records


def _emit_adaptive(cfg: RunConfig, em: _Emitter, field):
    ok = field.solvable
    if not np.all(ok):
        keep = np.flatnonzero(ok)
        lo, hi = int(keep[0]), int(keep[-1])
    else:
        lo, hi = 0, len(field.y) - 1
    y = field.y[lo:hi + 1]
    u0 = cfg.init.u0_on(y)
    lm = ad.LimitModel(y, u0, field.lam[lo:hi + 1],
                       grad_lam=field.grad_lam[lo:hi + 1])
    T = cfg.T if cfg.T > 0 else 1.0
    rho_t, rho_v = ad.rho_series(lm, T, dt=1e-3)
    ybar0 = float(y[int(np.argmax(u0))])
    times, ys, lams = ad.canonical_trajectory(lm, ybar0, T, dt=1e-3)
    rho_on_track = np.interp(times, rho_t, rho_v)
    grad_res = np.empty_like(times)
    val_res = np.empty_like(times)
    for i, t in enumerate(times):
        _, gres, vres, _ = ad.concentration_point(lm, float(t), rho_t, rho_v)
        grad_res[i] = gres
        val_res[i] = vres
    em.write_csv("trajectory.csv",
                 ["t", "ybar", "lambda_ybar", "rho", "grad_residual",
                  "value_residual"],
                 [times, ys, lams, rho_on_track, grad_res, val_res])
    cps = ad.critical_points(lm)
    em.write_text("critical_points.csv", "y,kind\n" + "".join(
        f"{DATA_FMT % yv},{kind}\n" for yv, kind in cps))
    report = ad.rho_monotonicity_check(rho_v)
    em.write_text("rho_monotonicity.txt",
                  f"passed: {report.passed}\n"
                  f"first_violation_index: {report.first_violation_index}\n"
                  f"worst_drop: {report.worst_drop!r}\n")


def _emit_hjb(cfg: RunConfig, em: _Emitter):
    g = cfg.grid
    u0 = cfg.init.u0_on(g.y)
    traj = solve_hj(cfg.model, g, cfg.kernel, u0, cfg.T, cfg.init.k0,
                    R=cfg.hj_R, dt=cfg.hj_dt,
                    record_every=max(1, int(round(
                        (cfg.snapshot_interval or cfg.T / 10.0)
                        / (cfg.hj_dt or min(1e-3, g.eps / 10.0))))))
    rows_t, rows_y, rows_u, rows_d, rows_e = [], [], [], [], []
    for i, t in enumerate(traj.times):
        rows_t.append(np.full(len(g.y), t))
        rows_y.append(g.y)
        rows_u.append(traj.U[i])
        rows_d.append(traj.dUdt[i])
        rows_e.append(traj.eta[i])
    em.write_csv("hj_run.csv", ["t", "y", "U", "dUdt", "eta"],
                 [np.concatenate(rows_t), np.concatenate(rows_y),
                  np.concatenate(rows_u), np.concatenate(rows_d),
                  np.concatenate(rows_e)])
    em.write_text("certification.txt",
                  f"certified: {traj.certified}\nR: {traj.R!r}\n"
                  f"sup_dUdt0: {traj.sup_dUdt[0]!r}\n"
                  f"max_sup_dUdt: {float(np.max(traj.sup_dUdt))!r}\n")
    if cfg.eps_list:
        def grid_for(eps):
            from .model import Grid
            return Grid(g.x_max, g.nx, g.y_min, g.y_max, g.ny, eps=eps,
                        a_hi=g.a_hi)
        rep = viscosity_limit_study(cfg.model, grid_for, cfg.kernel,
                                    cfg.init.u0_on, cfg.T, cfg.init.k0,
                                    cfg.eps_list, R=cfg.hj_R)
        lines = ["k,eps_hi,eps_lo,gap"]
        for i, gap in enumerate(rep.gaps):
            lines.append(f"{i + 1},{DATA_FMT % rep.eps_list[i]},"
                         f"{DATA_FMT % rep.eps_list[i + 1]},{DATA_FMT % gap}")
        lines.append(f"# cauchy_decreasing: {rep.cauchy_decreasing}")
        lines.append(f"# limit_equation_residual: {DATA_FMT % rep.residual}")
        em.write_text("convergence.csv", "\n".join(lines) + "\n")


def _emit_concentration(cfg: RunConfig, em: _Emitter, traj, tracker, records):
    for rec, snap in zip(records, traj.snapshots):
        tag = _fmt_time(rec.t)
        em.write_csv(f"concentration_t{tag}.csv", ["y", "m_age0", "u"],
                     [cfg.grid.y, snap.m[0, :], rec.u], fmt=PLOT_FMT)


def run(mode: str, config_path, out: str | None = None,
        paper_literal_boundary: bool = False,
        eps: float | None = None) -> int:
    """Execute one mode; returns the process exit status."""
    overrides = {"out": out, "eps": eps}
    if paper_literal_boundary:
        overrides["paper_literal_boundary"] = True
    try:
        cfg = load_config(config_path, mode=mode, overrides=overrides)
        report = validate_assumptions(cfg.model, cfg.grid)
        if cfg.init is not None:
            problems = cfg.init.check(cfg.grid.y)
            for p in problems:
                print(f"warning: init: {p}", file=sys.stderr)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    em = _Emitter(cfg.out_dir)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if cfg.mode == "eigen":
                _emit_eigen(cfg, em)
            elif cfg.mode == "simulate":
                _emit_run(cfg, em)
            elif cfg.mode == "simulate-mutation":
                _emit_run(cfg, em, kernel=cfg.kernel)
            elif cfg.mode == "decompose":
                field = solve_field(cfg.model, cfg.grid)
                traj = _emit_run(cfg, em)
                _emit_decomposition(cfg, em, field, traj)
            elif cfg.mode == "adaptive":
                field = _emit_eigen(cfg, em)
                _emit_adaptive(cfg, em, field)
            elif cfg.mode == "hjb":
                _emit_hjb(cfg, em)
            elif cfg.mode == "full-report":
                field = _emit_eigen(cfg, em)
                traj = _emit_run(cfg, em, kernel=cfg.kernel)
                tracker, records = _emit_decomposition(cfg, em, field, traj)
                _emit_adaptive(cfg, em, field)
                _emit_concentration(cfg, em, traj, tracker, records)
        em.write_text("validation.txt", report.summary() + "\n")
    except InstabilityError as exc:
        print(f"numerical failure: transport.step: {exc}", file=sys.stderr)
        return 2
    except CertificationError as exc:
        print(f"numerical failure: hjb.solve_hj: {exc}", file=sys.stderr)
        return 2
    except (EigenError, OverflowError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    em.write_manifest()
    print(f"{cfg.mode}: wrote {len(em.files) + 1} files to {cfg.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="renewal-lab",
        description="age-and-trait structured renewal population laboratory")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="configuration file")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--paper-literal-boundary", action="store_true",
                        help="use the bare interior sum as the renewal "
                             "boundary quadrature (resolution-dependent)")
    parser.add_argument("--eps", type=float, default=None,
                        help="override the scale parameter")
    args = parser.parse_args(argv)
    return run(args.mode, args.config, out=args.out,
               paper_literal_boundary=args.paper_literal_boundary,
               eps=args.eps)


if __name__ == "__main__":
    sys.exit(main())
