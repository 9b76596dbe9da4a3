"""Perturbation sweeps in w, quadratic growth and multiplier stability."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discrete import discretize
from .grid import GridField, MeshQ, norm
from .kkt import KktPoint, NcpConfig, solve_ocp
from .pde import SolverError, solve_state, state_residual
from .sosc import coercivity

CSV_COLUMNS = ("direction", "radius", "du_l2", "dy_w112", "dphi_l2", "de_l2",
               "ratio_u", "ratio_y", "ratio_phi", "ratio_e", "iters", "status")
SLOPE_RANGE = (0.9, 1.1)
GROWTH_TOL = 1e-10
FEASIBILITY_TOL = 1e-12  # converged bases sit on g = 0 up to roundoff


class InsufficientRecordsError(ValueError):
    pass


class ProjectionError(RuntimeError):
    def __init__(self, index):
        super().__init__(f"cannot restore g <= 0 at lattice point {index}")
        self.index = index


@dataclass
class SweepPlan:
    directions: list  # (name, GridField) pairs
    radii: tuple
    warm_start: bool = True

    def __post_init__(self):
        self.radii = tuple(float(r) for r in self.radii)
        if len(self.radii) < 3:
            raise ValueError("a sweep needs at least 3 radii")
        if any(not r > 0 for r in self.radii):
            raise ValueError("radii must be positive")
        if any(b >= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly decreasing")
        if len(self.directions) < 2:
            raise ValueError("a sweep needs at least 2 directions")
        names = [n for n, _ in self.directions]
        if len(set(names)) != len(names):
            raise ValueError("direction names must be unique")
        for name, d in self.directions:
            size = float(np.max(np.abs(d.values)))
            if abs(size - 1.0) > 1e-12:
                raise ValueError(f"direction {name!r} has sup norm {size!r}, expected 1")


def default_radii(count: int = 5, largest: float = 0.1) -> tuple:
    return tuple(largest * 2.0**-k for k in range(count))


def default_directions(mesh: MeshQ, seed: int = 0) -> list:
    """Constant, separable sine and seeded +-1 fields, each with sup norm 1."""
    X, T = mesh.lattice(all_levels=True)
    coords = (X,) if mesh.dim == 1 else X
    bump = np.sin(np.pi * T / mesh.T)
    for c, (lo, hi) in zip(coords, mesh.domain.bounds):
        bump = bump * np.sin(np.pi * (c - lo) / (hi - lo))
    bump = bump / np.max(np.abs(bump))
    signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=bump.shape)
    return [
        ("constant", GridField(mesh, np.ones_like(bump))),
        ("sine", GridField(mesh, bump)),
        ("random_sign", GridField(mesh, signs)),
    ]


def default_plan(mesh: MeshQ, seed: int = 0) -> SweepPlan:
    return SweepPlan(default_directions(mesh, seed), default_radii())


@dataclass
class SweepRecord:
    direction: str
    radius: float
    du_l2: float = math.nan
    dy_w112: float = math.nan
    dphi_l2: float = math.nan
    de_l2: float = math.nan
    iters: int = 0
    status: str = "ok"
    gap: float = math.nan
    max_abs_eg: float = math.nan
    min_e: float = math.nan

    @property
    def valid(self) -> bool:
        return self.status == "ok"

    def ratio(self, name: str) -> float:
        return getattr(self, name) / self.radius

    def row(self) -> dict:
        out = {"direction": self.direction, "radius": self.radius, "du_l2": self.du_l2,
               "dy_w112": self.dy_w112, "dphi_l2": self.dphi_l2, "de_l2": self.de_l2}
        for key, src in (("ratio_u", "du_l2"), ("ratio_y", "dy_w112"),
                         ("ratio_phi", "dphi_l2"), ("ratio_e", "de_l2")):
            out[key] = self.ratio(src)
        out["iters"] = self.iters
        out["status"] = self.status
        return out


@dataclass
class StabilityReport:
    K_lips_hat: float
    k_lips_hat: float
    slopes: dict
    per_radius: dict
    verdicts: dict
    n_valid: int
    n_invalid: int
    sosc: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"K_lips_hat": self.K_lips_hat, "k_lips_hat": self.k_lips_hat,
                "slopes": self.slopes, "per_radius": self.per_radius, "verdicts": self.verdicts,
                "n_valid": self.n_valid, "n_invalid": self.n_invalid, "sosc": self.sosc}


def lagrangian(problem, y: GridField, u: GridField, phi: GridField, e: GridField,
               w: GridField) -> float:
    """J + <phi, state residual> + <e, g> in the discrete quadrature."""
    prob = discretize(problem, y.mesh)
    res = state_residual(prob, y, u, w)
    g = prob.g(y.interior, u.interior, w.interior)
    return prob.objective(y, u, w) + prob.weight * float(
        np.sum(phi.interior * res) + np.sum(e.interior * g))


def lagrangian_gap_check(problem, base: KktPoint, perturbed: KktPoint, wbar: GridField) -> float:
    """L(ybar, ubar, phi, e, wbar) - L(ybar, ubar, phi_w, e_w, wbar); nonnegative in theory."""
    prob = discretize(problem, wbar.mesh)
    return (lagrangian(prob, base.y, base.u, base.phi, base.e, wbar)
            - lagrangian(prob, base.y, base.u, perturbed.phi, perturbed.e, wbar))


def _distances(prob, base: KktPoint, pt: KktPoint) -> dict:
    return {"du_l2": norm(pt.u - base.u, "L2Q"),
            "dy_w112": norm(pt.y - base.y, "W112", prob.op),
            "dphi_l2": norm(pt.phi - base.phi, "L2Q"),
            "de_l2": norm(pt.e - base.e, "L2Q")}


def _sweep_task(args) -> SweepRecord:
    prob, base, wbar, name, d, radius, warm, config = args
    w = wbar + d * radius
    rec = SweepRecord(name, radius)
    try:
        pt = solve_ocp(prob, w, init=base if warm else None, config=config)
    except (SolverError, np.linalg.LinAlgError) as exc:
        rec.status = f"invalid:{type(exc).__name__}"
        return rec
    for key, val in _distances(prob, base, pt).items():
        setattr(rec, key, val)
    g = prob.g(pt.y.interior, pt.u.interior, w.interior)
    rec.iters = pt.iterations
    rec.gap = lagrangian_gap_check(prob, base, pt, wbar)
    rec.max_abs_eg = float(np.max(np.abs(pt.e.interior * g)))
    rec.min_e = float(np.min(pt.e.values))
    return rec


def _slope(radii, values) -> float:
    pairs = [(r, v) for r, v in zip(radii, values) if v > 0 and np.isfinite(v)]
    if len(pairs) < 2:
        return math.nan
    r, v = np.log(np.array(pairs)).T
    return float(np.polyfit(r, v, 1)[0])


def _within_factor(a: float, b: float, factor: float = 2.0) -> bool:
    if not (np.isfinite(a) and np.isfinite(b)):
        return False
    if a == 0 and b == 0:
        return True
    return min(a, b) > 0 and max(a, b) <= factor * min(a, b)


def summarize(records: list, radii, sosc_info: dict | None = None) -> StabilityReport:
    valid = [r for r in records if r.valid]
    K = lambda r: (r.dy_w112 + r.du_l2) / r.radius  # noqa: E731
    k = lambda r: (r.dphi_l2 + r.de_l2) / r.radius  # noqa: E731
    slopes = {}
    for name in dict.fromkeys(r.direction for r in records):
        rs = [r for r in valid if r.direction == name]
        slopes[name] = {key: _slope([r.radius for r in rs], [getattr(r, attr) for r in rs])
                        for key, attr in (("u", "du_l2"), ("y", "dy_w112"),
                                          ("phi", "dphi_l2"), ("e", "de_l2"))}
    per_radius = {}
    for rad in radii:
        rs = [r for r in valid if r.radius == rad]
        per_radius[repr(rad)] = {"K": max((K(r) for r in rs), default=math.nan),
                                 "k": max((k(r) for r in rs), default=math.nan),
                                 "gap_min": min((r.gap for r in rs), default=math.nan)}
    finite = [s for d in slopes.values() for s in d.values() if np.isfinite(s)]
    small = [per_radius[repr(r)] for r in sorted(radii)[:2]]
    sosc_info = sosc_info or {}
    verdicts = {
        "hypotheses": "met" if sosc_info.get("verdict") == "SOSC holds" else "hypotheses unmet",
        "slopes_in_range": bool(finite) and all(SLOPE_RANGE[0] <= s <= SLOPE_RANGE[1]
                                                for s in finite),
        "K_stable": _within_factor(small[0]["K"], small[1]["K"]),
        "k_stable": _within_factor(small[0]["k"], small[1]["k"]),
        "gap_nonnegative": all(r.gap >= -GROWTH_TOL for r in valid),
    }
    return StabilityReport(
        K_lips_hat=max((K(r) for r in valid), default=math.nan),
        k_lips_hat=max((k(r) for r in valid), default=math.nan),
        slopes=slopes, per_radius=per_radius, verdicts=verdicts,
        n_valid=len(valid), n_invalid=len(records) - len(valid), sosc=sosc_info)


def perturbation_sweep(problem, base: KktPoint, wbar: GridField, plan: SweepPlan,
                       config: NcpConfig | None = None, workers: int = 1):
    """Solve at ``wbar + radius * d`` for every (direction, radius) of the plan.

    Records come back in (direction, radius) plan order whatever the worker
    count. Returns ``(records, StabilityReport)``.
    """
    prob = discretize(problem, wbar.mesh)
    for _, d in plan.directions:
        prob.mesh.require_same(d.mesh)
    tasks = [(prob, base, wbar, name, d, rad, plan.warm_start, config)
             for name, d in plan.directions for rad in plan.radii]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_task, tasks))
    else:
        records = [_sweep_task(t) for t in tasks]
    try:
        sosc_info = coercivity(prob, base, wbar).to_dict()
    except (SolverError, np.linalg.LinAlgError, ArithmeticError) as exc:
        sosc_info = {"verdict": "indeterminate", "error": str(exc)}
    return records, summarize(records, plan.radii, sosc_info)


def multiplier_stability_check(records: list) -> dict:
    """M1 = max de / (du + radius) and its stability across the two smallest radii."""
    valid = [r for r in records if r.valid and (r.de_l2 > 0 or r.du_l2 > 0)]
    if len(valid) < 3:
        raise InsufficientRecordsError("insufficient records")
    ratio = lambda r: r.de_l2 / (r.du_l2 + r.radius)  # noqa: E731
    radii = sorted({r.radius for r in valid})
    per_radius = {repr(rad): max(ratio(r) for r in valid if r.radius == rad) for rad in radii}
    if len(radii) >= 2:
        stable = _within_factor(per_radius[repr(radii[0])], per_radius[repr(radii[1])])
    else:
        stable = False
    return {"M1_hat": max(ratio(r) for r in valid), "per_radius": per_radius, "stable": stable}


# --- quadratic growth ------------------------------------------------------


def _project_feasible(prob, y, u, w, ref, iters: int = 80):
    """Move each infeasible entry of u toward feasibility by a bracketed bisection in u."""
    g = prob.g(y, u, w)
    bad = g > FEASIBILITY_TOL
    if not bad.any():
        return u
    u = u.copy()
    idx = np.nonzero(bad)
    X = prob.X[idx] if prob.mesh.dim == 1 else tuple(c[idx] for c in prob.X)
    T, yy, ww = prob.T[idx], y[idx], w[idx]

    def gval(v):
        return prob.spec.g(X, T, yy, v, ww)

    hi = u[idx]
    gu = prob.spec.g.derivs(X, T, yy, hi, ww).u
    direction = -np.sign(gu)
    step = np.maximum(np.abs(hi - ref[idx]), 1e-8)
    lo = hi + direction * step
    for _ in range(60):
        still = gval(lo) > 0
        if not still.any():
            break
        step = np.where(still, 2 * step, step)
        lo = np.where(still, hi + direction * step, lo)
    else:
        raise ProjectionError(tuple(int(i[np.argmax(gval(lo) > 0)]) for i in idx))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        feasible = gval(mid) <= 0
        lo = np.where(feasible, mid, lo)
        hi = np.where(feasible, hi, mid)
    u[idx] = lo
    return u


def growth_check(problem, base: KktPoint, wbar: GridField, samples: int = 200,
                 radius: float = 1e-2, seed: int = 0) -> dict:
    """Empirical growth constant of J around ``base`` over feasible sup-norm perturbations.

    J at the base is evaluated at the state of ``base.u``, so a base whose
    stored state is stale is still compared consistently. Returns ``kappa``
    (min of dJ / ||du||^2), ``violations`` (numerators below -1e-10) and
    ``used`` (samples with nonzero control distance).
    """
    prob = discretize(problem, wbar.mesh)
    rng = np.random.default_rng(seed)
    ybar, _ = solve_state(prob, base.u, wbar)
    J0 = prob.objective(ybar, base.u, wbar)
    ub, wi = base.u.interior, wbar.interior
    kappas, violations = [], 0
    for _ in range(samples):
        u = ub + radius * rng.uniform(-1.0, 1.0, ub.shape)
        y = base.y
        for _ in range(20):
            y, _ = solve_state(prob, prob.field(u), wbar)
            if np.all(prob.g(y.interior, u, wi) <= FEASIBILITY_TOL):
                break
            u = _project_feasible(prob, y.interior, u, wi, ub)
        else:
            raise ProjectionError(None)
        du = prob.field(u) - base.u
        d2 = norm(du, "L2Q") ** 2
        if d2 == 0:
            continue
        gain = prob.objective(y, prob.field(u), wbar) - J0
        violations += gain < -GROWTH_TOL
        kappas.append(gain / d2)
    return {"kappa": min(kappas) if kappas else math.nan, "violations": int(violations),
            "used": len(kappas), "radius": radius, "samples": samples}


# --- output ----------------------------------------------------------------


def records_csv(records: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        row = rec.row()
        writer.writerow([repr(v) if isinstance(v, float) else v for v in
                         (row[c] for c in CSV_COLUMNS)])
    return buf.getvalue()


def plot_data(records: list) -> str:
    """Blocks per direction of ``radius du_l2 dy_w112 dphi_l2 de_l2``, for log-log plots."""
    lines = ["# radius du_l2 dy_w112 dphi_l2 de_l2"]
    for name in dict.fromkeys(r.direction for r in records):
        lines.append(f"# direction {name}")
        for r in sorted((r for r in records if r.direction == name and r.valid),
                        key=lambda r: r.radius):
            lines.append(" ".join(repr(v) for v in (r.radius, r.du_l2, r.dy_w112,
                                                     r.dphi_l2, r.de_l2)))
        lines.append("")
    return "\n".join(lines) + "\n"
