"""Command-line front end.

Exit codes: 0 ok, 1 configuration error, 2 solver failure, 3 partial sweep,
4 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, problem_toml
from .discrete import DiscreteProblem
from .grid import GridField, MeshQ, read_field, write_field
from .kkt import KktPoint, dumps, h4_margin, kkt_residuals, read_point, solve_ocp, write_point
from .model import SpatialDomain
from .oracle import RECIPES, ConstraintActivationError, build_manufactured, fd_gradient_check
from .pde import SolverError
from .sosc import coercivity
from .stability import (SweepPlan, default_directions, default_radii, multiplier_stability_check,
                        InsufficientRecordsError, perturbation_sweep, plot_data, records_csv)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PARTIAL, EXIT_VERIFY = 0, 1, 2, 3, 4
GRADCHECK_TOL = 1e-5


def _mesh_arg(text: str) -> tuple:
    try:
        nx, nt = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected NX,NT") from None
    if nx < 1 or nt < 1:
        raise argparse.ArgumentTypeError("mesh sizes must be positive")
    return nx, nt


def _write(path: str, text: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _header(cfg: RunConfig) -> dict:
    return {"version": __version__, "seed": cfg.seed, "mesh": {"nx": cfg.nx, "nt": cfg.nt},
            "config": cfg.echo["config"]}


def _setup(args):
    cfg = load_config(args.config, seed=args.seed, mesh=args.mesh)
    mesh = cfg.mesh()
    spec = cfg.problem.build(mesh)
    prob = DiscreteProblem(spec, mesh)
    return cfg, prob, prob.parameter()


def _warm(args, prob) -> KktPoint | None:
    if not getattr(args, "warm", None):
        return None
    try:
        return read_point(args.warm, prob.mesh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read warm start {args.warm}: {exc}") from None


def _base(args, cfg, prob, w) -> KktPoint:
    return solve_ocp(prob, w, init=_warm(args, prob), config=cfg.solver)


def cmd_solve(args) -> int:
    cfg, prob, w = _setup(args)
    point = _base(args, cfg, prob, w)
    extra = _header(cfg)
    extra.update({"J": prob.objective(point.y, point.u, w), "h4_margin": h4_margin(prob, point, w),
                  "kkt_tol": cfg.solver.kkt_tol, "history": point.history})
    write_point(os.path.join(args.out, "point"), point, extra)
    _write(os.path.join(args.out, "diagnostics.json"), dumps(
        dict(extra, residuals=point.residuals._asdict(), iterations=point.iterations,
             converged=point.converged)))
    print(f"converged in {point.iterations} iterations, J = {extra['J']!r}")
    return EXIT_OK


def _plan(cfg: RunConfig, mesh: MeshQ) -> SweepPlan:
    s = cfg.sweep
    seed = int(s.get("seed", cfg.seed))
    builtin = dict(default_directions(mesh, seed))
    directions = []
    for item in s.get("directions", list(builtin)):
        if isinstance(item, str):
            directions.append((item, builtin[item]))
        else:
            path = os.path.join(cfg.problem.base_dir, item["file"])
            try:
                directions.append((item["name"], read_field(path, mesh)))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"direction file {path}: {exc}") from None
    radii = tuple(s.get("radii", default_radii()))
    try:
        return SweepPlan(directions, radii, bool(s.get("warm_start", True)))
    except ValueError as exc:
        raise ConfigError(f"[sweep]: {exc}") from None


def cmd_sweep(args) -> int:
    cfg, prob, w = _setup(args)
    plan = _plan(cfg, prob.mesh)
    base = _base(args, cfg, prob, w)
    workers = int(cfg.sweep.get("workers", 1))
    records, report = perturbation_sweep(prob, base, w, plan, cfg.solver, workers=workers)
    try:
        mult = multiplier_stability_check(records)
    except InsufficientRecordsError as exc:
        mult = {"error": str(exc)}
    out = _header(cfg)
    out.update({"report": report.to_dict(), "multiplier": mult,
                "gaps": [r.gap for r in records],
                "complementarity": {"max_abs_eg": max((r.max_abs_eg for r in records
                                                       if r.valid), default=None),
                                    "min_e": min((r.min_e for r in records if r.valid),
                                                 default=None)}})
    _write(os.path.join(args.out, "sweep.csv"), records_csv(records))
    _write(os.path.join(args.out, "report.json"), dumps(out))
    _write(os.path.join(args.out, "plot.dat"), plot_data(records))
    print(f"{report.n_valid} valid of {len(records)} records; K = {report.K_lips_hat!r}, "
          f"k = {report.k_lips_hat!r}; {report.verdicts['hypotheses']}")
    return EXIT_OK if report.n_invalid == 0 else EXIT_PARTIAL


def cmd_sosc(args) -> int:
    cfg, prob, w = _setup(args)
    point = _warm(args, prob) if args.point_only else _base(args, cfg, prob, w)
    rep = coercivity(prob, point, w)
    write_field(os.path.join(args.out, "witness.grid"), rep.witness_v)
    out = _header(cfg)
    out.update(rep.to_dict())
    out["witness_file"] = "witness.grid"
    _write(os.path.join(args.out, "sosc.json"), dumps(out))
    print(f"alpha = {rep.alpha!r}, rho = {rep.rho!r}: {rep.verdict}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg, prob, w = _setup(args)
    if not args.point:
        raise ConfigError("verify needs --point DIR")
    try:
        point = read_point(args.point, prob.mesh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read point {args.point}: {exc}") from None
    res = kkt_residuals(prob, point, w, cfg.solver)
    tol = cfg.solver.kkt_tol
    mesh = prob.mesh
    disc = tol if args.discretization_tol is None else args.discretization_tol * (
        mesh.tau + mesh.h**2)
    margin = h4_margin(prob, point, w)
    rep = coercivity(prob, point, w)
    checks = {
        "state": res.state <= disc,
        "adjoint": res.adjoint <= disc,
        "stationarity": res.stationarity <= tol,
        "complementarity": res.complementarity <= tol,
        "h4": margin > 0,
        "sosc": rep.verdict == "SOSC holds",
    }
    for k, v in res._asdict().items():
        print(f"{k:16s} {v:.3e}")
    print(f"{'h4_margin':16s} {margin:.3e}")
    print(f"{'alpha':16s} {rep.alpha:.6e}")
    print(f"{'rho':16s} {rep.rho:.6e}")
    failed = [k for k, ok in checks.items() if not ok]
    print("verify: " + ("ok" if not failed else "FAILED " + ", ".join(failed)))
    out = _header(cfg)
    out.update({"residuals": res._asdict(), "h4_margin": margin, "alpha": rep.alpha,
                "rho": rep.rho, "thresholds": {"discretization": disc, "kkt": tol},
                "checks": checks})
    _write(os.path.join(args.out, "verify.json"), dumps(out))
    return EXIT_OK if not failed else EXIT_VERIFY


def cmd_gradcheck(args) -> int:
    cfg, prob, w = _setup(args)
    warm = _warm(args, prob)
    u = warm.u if warm is not None else prob.mesh.zeros()
    try:
        err = fd_gradient_check(prob, u, w, directions=args.directions, step=args.step,
                                seed=cfg.seed)
    except ConstraintActivationError as exc:
        print(f"gradcheck: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    out = _header(cfg)
    out.update({"relative_error": err, "step": args.step, "directions": args.directions})
    _write(os.path.join(args.out, "gradcheck.json"), dumps(out))
    print(f"max relative error {err:.3e}")
    return EXIT_OK if err <= GRADCHECK_TOL else EXIT_VERIFY


def cmd_mms(args) -> int:
    nx, nt = args.mesh or (16, 16)
    domain = SpatialDomain.interval()
    levels = []
    for k in range(args.levels):
        mesh = MeshQ(domain, 1.0, (nx + 1) * 2**k - 1, nt * 2**k)
        case = build_manufactured(args.recipe, mesh)
        res = kkt_residuals(case.spec, case.point(), case.w)
        levels.append({"nx": mesh.nx, "nt": mesh.nt, "h": mesh.h, "tau": mesh.tau,
                       "residuals": res._asdict()})
    orders = {}
    for key in ("state", "adjoint"):
        r = [lv["residuals"][key] for lv in levels]
        orders[key] = [float(np.log2(a / b)) if a > 0 and b > 0 else None
                       for a, b in zip(r, r[1:])]
    case = build_manufactured(args.recipe, MeshQ(domain, 1.0, nx, nt))
    os.makedirs(os.path.join(args.out, "exact"), exist_ok=True)
    write_field(os.path.join(args.out, "w.grid"), case.w)
    _write(os.path.join(args.out, "problem.toml"), problem_toml(case.spec, w_file="w.grid"))
    _write(os.path.join(args.out, "run.toml"),
           f'schema = 1\nproblem = "problem.toml"\n\n[mesh]\nnx = {nx}\nnt = {nt}\n')
    for name, fld in case.point().fields().items():
        write_field(os.path.join(args.out, "exact", f"{name}.grid"), fld)
    _write(os.path.join(args.out, "mms.json"), dumps({
        "version": __version__, "recipe": args.recipe, "levels": levels,
        "orders_per_halving": orders, "exact": case.exact}))
    print(f"{args.recipe}: residual orders per halving {orders}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "sosc": cmd_sosc, "verify": cmd_verify,
            "gradcheck": cmd_gradcheck, "mms": cmd_mms}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parastab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="run or problem TOML file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mesh", type=_mesh_arg, default=None, metavar="NX,NT")
        return p

    common(sub.add_parser("solve", help="solve the KKT system")).add_argument("--warm")
    common(sub.add_parser("sweep", help="perturbation sweep in w")).add_argument("--warm")
    p = common(sub.add_parser("sosc", help="coercivity and Legendre constants"))
    p.add_argument("--warm", help="point directory; solved from here unless --point-only")
    p.add_argument("--point-only", action="store_true",
                   help="evaluate at the --warm point without solving")
    p = common(sub.add_parser("verify", help="check a stored KKT point"))
    p.add_argument("--point", help="directory with y/u/phi/e grid files")
    p.add_argument("--discretization-tol", type=float, default=None, metavar="C",
                   help="accept state/adjoint residuals up to C*(tau + h^2)")
    p = common(sub.add_parser("gradcheck", help="adjoint vs finite-difference gradient"))
    p.add_argument("--warm", help="point directory whose control is probed")
    p.add_argument("--directions", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-5)
    p = common(sub.add_parser("mms", help="export a manufactured case"), config=False)
    p.add_argument("--recipe", choices=RECIPES, default="lq_active_band")
    p.add_argument("--levels", type=int, default=3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sosc" and args.point_only and not args.warm:
        print("error: --point-only needs --warm", file=sys.stderr)
        return EXIT_CONFIG
    try:
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
