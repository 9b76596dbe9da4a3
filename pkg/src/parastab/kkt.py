"""Discrete first-order system: multipliers, residuals and a semismooth Newton solver.

Unknowns are the state, control, adjoint and constraint multiplier on the
control lattice (levels 1..nt). The complementarity conditions are
reformulated with an NCP function, by default ``e - max(0, e + c g)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discrete import DiscreteProblem, discretize
from .grid import GridField, read_field, write_field
from .model import audit_h1
from .pde import (
    SolverError,
    adjoint_residual,
    linearized_matrix,
    solve_adjoint,
    solve_state,
    state_residual,
)

G_U_FLOOR = 1e-12


class MaxIterationsError(SolverError):
    pass


class LineSearchStall(SolverError):
    pass


class H4MarginError(SolverError):
    def __init__(self, margin: float, gamma0: float, iteration: int):
        super().__init__(
            f"min |g_u| = {margin:.3e} fell below gamma0/2 = {gamma0 / 2:.3e} at iteration {iteration}"
        )
        self.margin = margin
        self.gamma0 = gamma0
        self.iteration = iteration


@dataclass(frozen=True)
class NcpConfig:
    ncp_kind: str = "min"
    c: float = 1.0
    kkt_tol: float = 1e-10
    max_outer_iters: int = 50
    ls_factor: float = 0.5
    ls_min_step: float = 2.0**-20
    ls_sigma: float = 1e-4

    def __post_init__(self):
        if self.ncp_kind not in ("min", "fischer_burmeister"):
            raise ValueError(f"unknown NCP kind {self.ncp_kind!r}")
        if not self.c > 0:
            raise ValueError("complementarity scaling c must be positive")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")


class Residuals(NamedTuple):
    state: float
    adjoint: float
    stationarity: float
    complementarity: float

    def max(self) -> float:
        return max(self)


@dataclass
class KktPoint:
    y: GridField
    u: GridField
    phi: GridField
    e: GridField
    residuals: Residuals | None = None
    iterations: int = 0
    converged: bool = False
    history: list = field(default_factory=list)

    def fields(self) -> dict:
        return {"y": self.y, "u": self.u, "phi": self.phi, "e": self.e}


def recover_multiplier(problem, y: GridField, u: GridField, w: GridField,
                       phi: GridField) -> GridField:
    """Pointwise ``e = (phi - L_u) / g_u`` from the stationarity condition.

    No sign projection is applied.
    """
    prob = discretize(problem, y.mesh)
    gu = prob.g_derivs(y.interior, u.interior, w.interior).u
    if np.min(np.abs(gu)) < G_U_FLOOR:
        idx = np.unravel_index(np.argmin(np.abs(gu)), gu.shape)
        raise ValueError(f"|g_u| < {G_U_FLOOR} at level {idx[0] + 1}, node {idx[1]}")
    Lu = prob.L_derivs(y.interior, u.interior, w.interior).u
    return prob.field((phi.interior - Lu) / gu)


def _ncp(e, g, kind: str, c: float):
    if kind == "min":
        return e - np.maximum(0.0, e + c * g)
    return np.sqrt(e**2 + (c * g) ** 2) - e + c * g


def kkt_residuals(problem, point: KktPoint, w: GridField, config: NcpConfig | None = None) -> Residuals:
    """L2Q norms of the state, adjoint and stationarity residuals, and the
    max-norm complementarity residual ``|min(e, -g)|`` (or Fischer-Burmeister)."""
    prob = discretize(problem, point.y.mesh)
    kind = config.ncp_kind if config is not None else "min"
    y, u, phi, e = point.y, point.u, point.phi, point.e
    l2 = lambda r: float(np.sqrt(np.sum(r**2) * prob.weight))  # noqa: E731
    r1 = state_residual(prob, y, u, w)
    r2 = adjoint_residual(prob, y, u, w, phi, e)
    Lu = prob.L_derivs(y.interior, u.interior, w.interior).u
    gd = prob.g_derivs(y.interior, u.interior, w.interior)
    r3 = Lu - phi.interior + e.interior * gd.u
    if kind == "min":
        r4 = np.minimum(e.interior, -gd.val)
    else:
        r4 = _ncp(e.interior, gd.val, kind, 1.0)
    return Residuals(l2(r1), l2(r2), l2(r3), float(np.max(np.abs(r4))))


def h4_margin(problem, point: KktPoint, w: GridField) -> float:
    """min |g_u| along the iterate, over the control lattice."""
    prob = discretize(problem, point.y.mesh)
    gu = prob.g_derivs(point.y.interior, point.u.interior, w.interior).u
    return float(np.min(np.abs(gu)))


def h4_margin_violated(margin: float, gamma0: float) -> bool:
    """True when the margin has dropped below half the nominal gamma0."""
    return margin < 0.5 * gamma0


class _System:
    """Residual map and generalised Jacobian on the stacked unknowns."""

    def __init__(self, prob: DiscreteProblem, w: GridField, config: NcpConfig):
        self.prob = prob
        self.w = w
        self.config = config
        self.N = prob.mesh.n_control
        self.shape = (prob.mesh.nt, prob.mesh.n_space)

    def split(self, z):
        N, s = self.N, self.shape
        return (z[:N].reshape(s), z[N:2 * N].reshape(s), z[2 * N:3 * N].reshape(s),
                z[3 * N:].reshape(s))

    def point(self, z) -> KktPoint:
        y, u, phi, e = self.split(z)
        p = self.prob
        return KktPoint(p.field(y, p.y0), p.field(u), p.field(phi), p.field(e))

    def residual(self, z):
        pt = self.point(z)
        p, w, cfg = self.prob, self.w, self.config
        y, u = pt.y.interior, pt.u.interior
        r1 = state_residual(p, pt.y, pt.u, w)
        r2 = adjoint_residual(p, pt.y, pt.u, w, pt.phi, pt.e)
        Lu = p.L_derivs(y, u, w.interior).u
        gd = p.g_derivs(y, u, w.interior)
        r3 = Lu - pt.phi.interior + pt.e.interior * gd.u
        r4 = _ncp(pt.e.interior, gd.val, cfg.ncp_kind, cfg.c)
        return np.concatenate([r1.ravel(), r2.ravel(), r3.ravel(), r4.ravel()])

    def jacobian(self, z):
        p, w, cfg = self.prob, self.w, self.config
        y, u, phi, e = self.split(z)
        wi = w.interior
        fd = p.f_derivs(y, wi)
        Ld = p.L_derivs(y, u, wi)
        gd = p.g_derivs(y, u, wi)
        B = linearized_matrix(p, fd.y)
        D = lambda a: sp.diags(np.ravel(a))  # noqa: E731
        I = sp.identity(self.N)
        Hyy = D(phi * fd.yy + Ld.yy + e * gd.yy)
        Hyu = D(Ld.yu + e * gd.yu)
        Huu = D(Ld.uu + e * gd.uu)
        if cfg.ncp_kind == "min":
            # kink e + c g = 0 is assigned to the inactive branch
            act = np.ravel(e + cfg.c * gd.val > 0).astype(float)
            dy = -cfg.c * act * np.ravel(gd.y)
            du = -cfg.c * act * np.ravel(gd.u)
            de = 1.0 - act
        else:
            a, b = np.ravel(e), -cfg.c * np.ravel(gd.val)
            r = np.hypot(a, b)
            safe = np.where(r > 0, r, 1.0)
            da = np.where(r > 0, a / safe, 1.0 / np.sqrt(2.0)) - 1.0
            db = np.where(r > 0, b / safe, 1.0 / np.sqrt(2.0)) - 1.0
            dy = db * (-cfg.c) * np.ravel(gd.y)
            du = db * (-cfg.c) * np.ravel(gd.u)
            de = da
        J = sp.bmat([
            [B, -I, None, None],
            [Hyy, Hyu, B.T, D(gd.y)],
            [Hyu, Huu, -I, D(gd.u)],
            [D(dy), D(du), None, D(de)],
        ], format="csc")
        return J


def cold_start(problem, w: GridField) -> KktPoint:
    """u = 0, y from the state equation, phi with e = 0, e = max(0, recovered)."""
    prob = discretize(problem, w.mesh)
    u = prob.mesh.zeros()
    y, _ = solve_state(prob, u, w)
    phi = solve_adjoint(prob, y, u, w)
    e = recover_multiplier(prob, y, u, w, phi)
    e.values[:] = np.maximum(e.values, 0.0)
    return KktPoint(y, u, phi, e)


def _pack(point: KktPoint) -> np.ndarray:
    return np.concatenate([point.y.interior.ravel(), point.u.interior.ravel(),
                           point.phi.interior.ravel(), point.e.interior.ravel()])


def solve_ocp(problem, w: GridField, init: KktPoint | None = None,
              config: NcpConfig | None = None) -> KktPoint:
    """Semismooth Newton on the discrete KKT system with a residual line search.

    Raises :class:`MaxIterationsError`, :class:`LineSearchStall` or
    :class:`H4MarginError`; a returned point satisfies every residual at
    ``config.kkt_tol``.
    """
    cfg = config or NcpConfig()
    prob = discretize(problem, w.mesh)
    if audit_h1(prob.spec.coeffs, prob.spec.domain, 64) <= 0:
        raise ValueError("ellipticity audit (H1) fails; refusing to solve")
    point = init if init is not None else cold_start(prob, w)
    system = _System(prob, w, cfg)
    z = _pack(point)
    gamma0 = h4_margin(prob, system.point(z), w)
    if gamma0 <= 0:
        raise H4MarginError(gamma0, gamma0, 0)

    history = []
    F = system.residual(z)
    for it in range(cfg.max_outer_iters + 1):
        pt = system.point(z)
        res = kkt_residuals(prob, pt, w, cfg)
        history.append({"iteration": it, "merit": float(F @ F), "J": prob.objective(pt.y, pt.u, w),
                        "residual_max": res.max()})
        if res.max() <= cfg.kkt_tol:
            pt.residuals, pt.iterations, pt.converged, pt.history = res, it, True, history
            return pt
        if it == cfg.max_outer_iters:
            break
        margin = h4_margin(prob, pt, w)
        if h4_margin_violated(margin, gamma0):
            raise H4MarginError(margin, gamma0, it)
        J = system.jacobian(z)
        try:
            d = spla.spsolve(J, -F)
        except RuntimeError as exc:
            raise SolverError(f"singular Newton matrix at iteration {it}: {exc}") from None
        if not np.all(np.isfinite(d)):
            raise SolverError(f"singular Newton matrix at iteration {it}")
        nF = np.linalg.norm(F)
        s = 1.0
        while True:
            z_new = z + s * d
            F_new = system.residual(z_new)
            if np.linalg.norm(F_new) <= (1.0 - cfg.ls_sigma * s) * nF:
                break
            s *= cfg.ls_factor
            if s < cfg.ls_min_step:
                raise LineSearchStall(f"line search stalled at iteration {it} (|F| = {nF:.3e})")
        z, F = z_new, F_new
    raise MaxIterationsError(f"no convergence in {cfg.max_outer_iters} iterations "
                             f"(max residual {res.max():.3e})")


# --- serialisation -----------------------------------------------------------


def write_point(directory, point: KktPoint, extra: dict | None = None):
    """Four grid files plus ``diagnostics.json``."""
    os.makedirs(directory, exist_ok=True)
    for name, fld in point.fields().items():
        write_field(os.path.join(directory, f"{name}.grid"), fld)
    record = {
        "residuals": point.residuals._asdict() if point.residuals is not None else None,
        "iterations": point.iterations,
        "converged": point.converged,
    }
    record.update(extra or {})
    with open(os.path.join(directory, "diagnostics.json"), "w") as fh:
        fh.write(dumps(record))


def read_point(directory, mesh) -> KktPoint:
    flds = {name: read_field(os.path.join(directory, f"{name}.grid"), mesh)
            for name in ("y", "u", "phi", "e")}
    return KktPoint(**flds)


def _clean(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return _clean(asdict(obj))
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats, NaN as null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
