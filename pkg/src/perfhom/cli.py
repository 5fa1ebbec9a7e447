"""Command line driver: ``perfhom <subcommand> [--config PATH] [--out DIR] [--seed N] [--threads N]``.

Exit code 0 means every check passed, 1 means at least one check failed and
2 means the run could not be carried out (bad config, solver breakdown).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import fem, io, studies
from .cell import build_table, effective_a, effective_b, effective_g, fit_table_coercivity, solve_cell
from .config import ConfigError, StudyConfig, load_config
from .geometry import check_conforming, macro_mesh, periodic_pairing, tile_perforated_domain
from .macro import solve_homogenized_elliptic, solve_homogenized_parabolic
from .fine import FineProblem, solve_fine_elliptic, solve_fine_parabolic

log = logging.getLogger("perfhom")

STUDY_COMMANDS = {
    "verify": "verify",
    "trace": "trace_convergence",
    "residual": "two_scale_residual",
    "identity": "boundary_identity",
    "uniq": "uniqueness",
}


def _config(args) -> StudyConfig:
    cfg = load_config(args.config) if args.config else StudyConfig()
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _finish(kind, cfg, checks, runtimes, files, out) -> int:
    io.write_manifest(out, {"study": kind, **cfg.echo()}, runtimes,
                      [c.as_dict() for c in checks], files + ["manifest.json"])
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {kind}: {c.name}"
              + (f" ({c.detail})" if c.detail else ""))
    return 0 if all(c.passed for c in checks) else 1


def cmd_study(kind: str, cfg: StudyConfig) -> int:
    report = studies.run_study(cfg, kind)
    studies.write_report(report, cfg, cfg.out)
    print(studies.format_checks(report))
    print(f"wrote {cfg.out}/{report.kind}.csv")
    return 0 if report.passed else 1


def cmd_converge(cfg: StudyConfig) -> int:
    kind = cfg.kind if cfg.kind == "parabolic_convergence" else "elliptic_convergence"
    return cmd_study(kind, cfg)


def cmd_mesh(cfg: StudyConfig) -> int:
    t0 = time.perf_counter()
    out = io.ensure_dir(cfg.out)
    s = studies.prepare(cfg, maps=False)
    checks = []
    meshes = {"cell": s.cell_mesh, "macro": macro_mesh(cfg.macro_h)}
    for n in cfg.n_list:
        meshes[f"fine_n{n}"] = tile_perforated_domain(s.cell_mesh, n)
    files = []
    rows = []
    for name, m in meshes.items():
        try:
            check_conforming(m)
            ok, detail = True, ""
        except ValueError as exc:
            ok, detail = False, str(exc)
        checks.append(studies.Check(f"{name} mesh conforming", ok, detail))
        io.write_vtk(out / f"{name}.vtk", m)
        files += [f"{name}.vtk", f"{name}.tags"]
        rows.append([name, m.n_vertices, len(m.triangles), len(m.hole_edges), m.area])
    pairing = periodic_pairing(s.cell_mesh)
    checks.append(studies.Check("cell mesh periodic pairing", len(pairing.pairs) > 0,
                                f"{len(pairing.pairs)} paired vertices"))
    io.write_csv(out / "meshes.csv", ["mesh", "vertices", "triangles", "hole_edges", "area"], rows)
    files.append("meshes.csv")
    return _finish("mesh", cfg, checks, {"total": time.perf_counter() - t0}, files, out)


def cmd_cell(cfg: StudyConfig, xi, u) -> int:
    t0 = time.perf_counter()
    out = io.ensure_dir(cfg.out)
    s = studies.prepare(cfg, maps=False)
    xi = np.asarray(xi, dtype=float)
    sol = solve_cell(s.cell_mesh, None, cfg.flux, s.g, xi, u, cfg.tol)
    a = effective_a(sol, cfg.flux, s.cell_mesh)
    b = effective_b(s.cell_mesh, None, cfg.flux, s.g, xi, u, mode="fd", solution=sol)
    gs = effective_g(s.g, s.cell_mesh, u)
    io.write_vtk(out / "corrector.vtk", s.cell_mesh, {"w": sol.w})
    io.write_newton_log(out / "cell_newton.csv", sol.history)
    io.write_csv(out / "cell.csv", ["xi1", "xi2", "u", "a1", "a2", "b", "g1", "g2", "residual"],
                 [[xi[0], xi[1], u, a[0], a[1], b, gs[0], gs[1], sol.residual_norm]])
    print(f"a* = {a.tolist()}  b* = {b:.17g}  g* = {gs.tolist()}")
    checks = [studies.Check("cell residual below tol", sol.residual_norm <= cfg.tol,
                            f"{sol.residual_norm:.3e} after {sol.newton_iters} iterations")]
    return _finish("cell", cfg, checks, {"total": time.perf_counter() - t0},
                   ["corrector.vtk", "corrector.tags", "cell_newton.csv", "cell.csv"], out)


def cmd_table(cfg: StudyConfig) -> int:
    t0 = time.perf_counter()
    out = io.ensure_dir(cfg.out)
    s = studies.prepare(cfg, maps=False)
    table = build_table(s.cell_mesh, None, cfg.flux, s.g, cfg.xi_box, cfg.u_box, cfg.table_res,
                        cfg.tol, cfg.threads)
    table.save_csv(out / "table.csv")
    gam, C = fit_table_coercivity(table)
    worst = float(np.max(table.node_residuals))
    checks = [studies.Check("node residuals below tol", worst <= cfg.tol, f"max {worst:.3e}"),
              studies.Check("tabulated a* coercive", gam > 0, f"gamma={gam:.6g}, C={C:.6g}")]
    return _finish("table", cfg, checks, {"total": time.perf_counter() - t0}, ["table.csv"], out)


def cmd_macro(cfg: StudyConfig) -> int:
    t0 = time.perf_counter()
    out = io.ensure_dir(cfg.out)
    s = studies.prepare(cfg)
    files, checks = [], []
    if cfg.kind == "parabolic_convergence":
        p = studies.macro_problem(s, u_init=lambda x: cfg.initial(x), T=cfg.T, dt=cfg.dt)
        snaps = solve_homogenized_parabolic(p, cfg.tol)
        fld = snaps[-1]
        rows = [[f.meta["step"], f.meta["time"], f.meta["newton_iters"],
                 fem.integral(fem.element_data(f.mesh), f.values)] for f in snaps]
        io.write_csv(out / "macro_steps.csv", ["step", "time", "newton_iters", "integral"], rows)
        files.append("macro_steps.csv")
        checks.append(studies.Check("all implicit Euler steps converged", True,
                                    f"{len(snaps) - 1} steps"))
    else:
        res = solve_homogenized_elliptic(studies.macro_problem(s), cfg.tol)
        fld = res.field
        io.write_newton_log(out / "macro_newton.csv", res.history)
        files.append("macro_newton.csv")
        checks.append(studies.Check("macro residual below tol", res.residual <= cfg.tol,
                                    f"{res.residual:.3e} after {res.iterations} iterations"))
        if res.clamp_events:
            log.warning("%d table queries fell outside the box", res.clamp_events)
    io.write_vtk(out / "macro.vtk", fld.mesh, {"U0": fld.values})
    files += ["macro.vtk", "macro.tags"]
    return _finish("macro", cfg, checks, {"total": time.perf_counter() - t0}, files, out)


def cmd_fine(cfg: StudyConfig, n: int | None) -> int:
    t0 = time.perf_counter()
    out = io.ensure_dir(cfg.out)
    s = studies.prepare(cfg, maps=False)
    n = n or cfg.n_list[0]
    F = tile_perforated_domain(s.cell_mesh, n)
    checks = []
    if cfg.kind == "parabolic_convergence":
        fp = FineProblem(F, cfg.flux, s.g, cfg.source, cfg.lam, u_init=lambda x: cfg.initial(x),
                         T=cfg.T, dt=cfg.dt)
        snaps = solve_fine_parabolic(fp, cfg.tol)
        values = snaps[-1].values
        checks.append(studies.Check("all implicit Euler steps converged", True,
                                    f"{len(snaps) - 1} steps"))
        files = []
    else:
        r = solve_fine_elliptic(FineProblem(F, cfg.flux, s.g, cfg.source, cfg.lam), cfg.tol)
        values = r.field.values
        io.write_newton_log(out / f"fine_n{n}_newton.csv", r.history)
        files = [f"fine_n{n}_newton.csv"]
        checks.append(studies.Check("fine residual below tol", r.residual <= cfg.tol,
                                    f"{r.residual:.3e} after {r.iterations} iterations"))
    io.write_vtk(out / f"fine_n{n}.vtk", F, {"u_eps": values})
    files += [f"fine_n{n}.vtk", f"fine_n{n}.tags"]
    return _finish("fine", cfg, checks, {"total": time.perf_counter() - t0}, files, out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perfhom", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI study config")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads for table builds")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="write cell, fine and macro meshes")
    sub.add_parser("verify", parents=[common], help="assumption and effective-map probes")
    p = sub.add_parser("cell", parents=[common], help="one cell problem and its effective values")
    p.add_argument("--xi", type=float, nargs=2, default=(1.0, 0.0))
    p.add_argument("--u", type=float, default=0.0)
    sub.add_parser("table", parents=[common], help="tabulate a* and b* on the config box")
    sub.add_parser("macro", parents=[common], help="homogenized solve")
    p = sub.add_parser("fine", parents=[common], help="fine-scale solve")
    p.add_argument("--n", type=int, help="cells per direction (default: first of n_list)")
    sub.add_parser("converge", parents=[common], help="elliptic or parabolic convergence study")
    sub.add_parser("trace", parents=[common], help="surface functional convergence")
    sub.add_parser("residual", parents=[common], help="two-scale residual check")
    sub.add_parser("identity", parents=[common], help="boundary identity of the g* term")
    sub.add_parser("uniq", parents=[common], help="random-start uniqueness probe")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args).validate()
        cmd = args.command
        if cmd in STUDY_COMMANDS:
            return cmd_study(STUDY_COMMANDS[cmd], cfg)
        if cmd == "converge":
            return cmd_converge(cfg)
        if cmd == "mesh":
            return cmd_mesh(cfg)
        if cmd == "cell":
            return cmd_cell(cfg, args.xi, args.u)
        if cmd == "table":
            return cmd_table(cfg)
        if cmd == "macro":
            return cmd_macro(cfg)
        if cmd == "fine":
            return cmd_fine(cfg, args.n)
    except (ConfigError, OSError, KeyError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
