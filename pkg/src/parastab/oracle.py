"""Ground-truth generators: manufactured KKT points, FD gradients, brute force."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .discrete import discretize
from .grid import GridField, MeshQ, norm
from .kkt import KktPoint
from .model import ProblemSpec, SpatialDomain
from .pde import solve_adjoint, solve_state
from .sosc import solution_operator

RECIPES = ("lq_inactive", "lq_active_band", "semilinear_band")


class ConstraintActivationError(RuntimeError):
    pass


@dataclass
class ManufacturedCase:
    """A problem whose exact KKT point is known in closed form.

    The exact fields are sampled on ``mesh``; ``spec`` carries the state
    closure as a sampled parameter, so it is bound to that mesh.
    """

    recipe: str
    spec: ProblemSpec
    mesh: MeshQ
    y: GridField
    u: GridField
    phi: GridField
    e: GridField
    active: np.ndarray
    exact: dict

    @property
    def w(self) -> GridField:
        return self.spec.w_ref

    def point(self) -> KktPoint:
        return KktPoint(self.y.copy(), self.u.copy(), self.phi.copy(), self.e.copy())


def build_manufactured(recipe: str, mesh: MeshQ, gain: float = 20.0,
                       band: tuple = (0.25, 0.75)) -> ManufacturedCase:
    """Manufactured KKT point for ``L = (y - y_d)^2/2 + (u - u_d)^2/2``, ``g = u - 1``.

    Exact state ``sin(pi x)(1 + t)`` and adjoint ``sin(pi x)(T - t)^2``. A
    smooth switching function q decides the active set: ``e* = max(q, 0)``,
    ``u* = 1 - max(-q, 0)``, and ``u_d = 1 - phi* + q`` closes stationarity.
    ``y_d`` closes the adjoint equation; the state closure is the parameter.
    """
    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe {recipe!r}; expected one of {RECIPES}")
    if mesh.dim != 1 or mesh.domain.bounds != ((0.0, 1.0),):
        raise ValueError("manufactured cases live on the unit interval")
    x, t = sp.symbols("x t")
    T = sp.nsimplify(mesh.T)
    lo, hi = (sp.nsimplify(b) for b in band)
    y_ex = sp.sin(sp.pi * x) * (1 + t)
    phi_ex = sp.sin(sp.pi * x) * (T - t) ** 2
    if recipe == "lq_inactive":
        q = -(1 + x * (1 - x))
    else:
        if not gain > 0:
            raise ValueError("gain must be positive, otherwise e* < 0 on the declared band")
        q = sp.nsimplify(gain) * (x - lo) * (hi - x)
    ysym = sp.Symbol("y")
    f_sym = ysym**3 if recipe == "semilinear_band" else sp.Integer(0)
    f_y = sp.diff(f_sym, ysym).subs(ysym, y_ex)
    psi = sp.Integer(1)
    u_d = psi - phi_ex + q
    y_d = y_ex + (-sp.diff(phi_ex, t) - sp.diff(phi_ex, x, 2) + f_y * phi_ex)
    L = f"0.5*(y - ({sp.expand(y_d)}))^2 + 0.5*(u - ({sp.expand(u_d)}))^2"
    L = L.replace("**", "^")
    f = str(f_sym).replace("**", "^")

    qf = sp.lambdify((x, t), q, "numpy")
    ystar = mesh.sample(sp.lambdify((x, t), y_ex, "numpy"))
    phistar = mesh.sample(sp.lambdify((x, t), phi_ex, "numpy"), levels0=False)
    qv = mesh.sample(lambda X, Tt: qf(X, Tt) + 0 * X)
    estar = GridField(mesh, np.maximum(qv.values, 0.0))
    ustar = GridField(mesh, 1.0 - np.maximum(-qv.values, 0.0))
    estar.values[0] = 0.0
    ustar.values[0] = 0.0
    # state closure y_t + A y + f(y) - u, sampled; nonsmooth in x through u*
    closure = sp.diff(y_ex, t) - sp.diff(y_ex, x, 2) + f_sym.subs(ysym, y_ex)
    wbar = mesh.sample(sp.lambdify((x, t), closure, "numpy")) - ustar
    spec = ProblemSpec.from_strings(
        SpatialDomain.interval(), mesh.T, "1", y0="sin(pi*x)", L=L, f=f, g="u - 1",
        w_ref=0.0, name=f"mms_{recipe}")
    spec = ProblemSpec(spec.domain, spec.T, spec.coeffs, spec.y0, spec.L, spec.f, spec.g,
                       wbar, spec.name)
    exact = {"y": str(y_ex), "phi": str(phi_ex), "q": str(q), "u_d": str(u_d),
             "y_d": str(y_d), "closure": str(closure)}
    return ManufacturedCase(recipe, spec, mesh, ystar, ustar, phistar, estar,
                            qv.interior > 0, exact)


# --- reduced gradient -------------------------------------------------------


def reduced_objective(problem, u: GridField, w: GridField) -> float:
    prob = discretize(problem, u.mesh)
    y, _ = solve_state(prob, u, w)
    return prob.objective(y, u, w)


def reduced_gradient(problem, u: GridField, w: GridField) -> GridField:
    """L2Q Riesz representative ``L_u - phi`` of the reduced gradient (no constraint term)."""
    prob = discretize(problem, u.mesh)
    y, _ = solve_state(prob, u, w)
    phi = solve_adjoint(prob, y, u, w)
    return prob.field(prob.L_derivs(y.interior, u.interior, w.interior).u - phi.interior)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


def _integrand_difference(prob, plus, minus, wi):
    """Pointwise L(plus) - L(minus) as a line integral of the gradient.

    Subtracting two nearly equal L values loses about |L|/|dL| digits; the
    3-point Gauss rule is exact for L of degree <= 6 along the segment and
    otherwise accurate to O(|plus - minus|^7).
    """
    dy, du = plus[0] - minus[0], plus[1] - minus[1]
    out = np.zeros_like(dy)
    for s, wt in zip(0.5 * (_GL_NODES + 1.0), 0.5 * _GL_WEIGHTS):
        Ld = prob.L_derivs(minus[0] + s * dy, minus[1] + s * du, wi)
        out += wt * (Ld.y * dy + Ld.u * du)
    return out


def fd_gradient_check(problem, u: GridField, w: GridField, directions: int = 5,
                      step: float = 1e-5, seed: int = 0) -> float:
    """Max relative mismatch between adjoint and central-difference directional derivatives."""
    prob = discretize(problem, u.mesh)
    rng = np.random.default_rng(seed)
    grad = reduced_gradient(prob, u, w)
    worst = 0.0
    for _ in range(directions):
        d = prob.field(rng.standard_normal(u.interior.shape))
        d = d * (1.0 / norm(d, "L2Q"))
        pts = []
        for sgn in (1.0, -1.0):
            us = u + d * (sgn * step)
            y, _ = solve_state(prob, us, w)
            if np.any(prob.g(y.interior, us.interior, w.interior) >= 0):
                raise ConstraintActivationError("constraint active during finite-difference probe")
            pts.append((y.interior, us.interior))
        fd = prob.weight * float(np.sum(_integrand_difference(prob, pts[0], pts[1], w.interior)))
        fd /= 2 * step
        ad = prob.weight * float(np.sum(grad.interior * d.interior))
        scale = max(abs(fd), abs(ad))
        worst = max(worst, abs(fd - ad) / scale if scale > 0 else 0.0)
    return worst


# --- brute force on tiny instances --------------------------------------------


def _project(prob, u, w):
    """Pointwise projection onto {g <= 0} for g independent of y and monotone in u."""
    X, T = prob.X, prob.T
    zero = np.zeros_like(u)
    g = prob.spec.g(X, T, zero, u, w)
    bad = g > 0
    if not bad.any():
        return u
    out = u.copy()
    gu = prob.spec.g.derivs(X, T, zero, u, w).u
    # g is affine in u in every supported fixture, but bisect anyway for safety
    hi = u[bad]
    lo = hi - np.sign(gu[bad]) * (g[bad] / np.abs(gu[bad]) + 1.0)
    sel = (X[bad] if prob.mesh.dim == 1 else tuple(c[bad] for c in X))
    args = (sel, T[bad], zero[bad])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        ok = prob.spec.g(*args, mid, w[bad]) <= 0
        lo, hi = np.where(ok, mid, lo), np.where(ok, hi, mid)
        if np.max(np.abs(hi - lo)) < 1e-15:
            break
    out[bad] = lo
    return out


@dataclass
class BruteForceResult:
    u: GridField
    J: float
    active: np.ndarray
    converged_starts: int


def brute_force_small(problem, w: GridField, starts: int = 20, seed: int = 0,
                      tol: float = 1e-12, max_iters: int = 20000) -> BruteForceResult:
    """Multistart projected gradient (Barzilai-Borwein steps with backtracking)."""
    prob = discretize(problem, w.mesh)
    if prob.mesh.n_control > 12:
        raise ValueError("brute force is limited to 12 control unknowns")
    if prob.spec.g.depends_on("y"):
        raise ValueError("brute force needs g independent of y")
    rng = np.random.default_rng(seed)
    wi = w.interior
    best, n_conv = None, 0

    def J(ui):
        return reduced_objective(prob, prob.field(ui), w)

    def grad(ui):
        return reduced_gradient(prob, prob.field(ui), w).interior

    shape = wi.shape
    for k in range(starts):
        u = _project(prob, np.zeros(shape) if k == 0 else rng.uniform(-2, 2, shape), wi)
        Ju, gu = J(u), grad(u)
        step = 1.0
        for _ in range(max_iters):
            while True:
                cand = _project(prob, u - step * gu, wi)
                Jc = J(cand)
                if Jc <= Ju - 1e-4 / step * np.sum((cand - u) ** 2) or step < 1e-14:
                    break
                step *= 0.5
            gc = grad(cand)
            s, r = (cand - u).ravel(), (gc - gu).ravel()
            moved = np.max(np.abs(cand - u))
            u, Ju, gu = cand, Jc, gc
            if moved <= tol:
                n_conv += 1
                break
            sr = s @ r
            step = float(s @ s / sr) if sr > 0 else 1.0
        if best is None or Ju < best[1]:
            best = (u, Ju)
    u = best[0]
    g = prob.g(np.zeros_like(u), u, wi)
    return BruteForceResult(prob.field(u), best[1], g >= -1e-8, n_conv)


# --- closed-form linear sensitivity ----------------------------------------------


def linear_sensitivity(problem, base: KktPoint, w: GridField, direction: GridField,
                       active_tol: float = 1e-10) -> dict:
    """Derivative of (u, e) along an additive source direction with the active set frozen.

    Valid for L separable and quadratic, f linear in y and free of w, and
    g = c u - psi(x, t). Uses the dense solution operator, no Newton solve.
    """
    prob = discretize(problem, w.mesh)
    y, u, wi = base.y.interior, base.u.interior, w.interior
    Ld = prob.L_derivs(y, u, wi)
    fd = prob.f_derivs(y, wi)
    gd = prob.g_derivs(y, u, wi)
    checks = {"L_yu": Ld.yu, "f_yy": fd.yy, "f_w": fd.w, "g_y": gd.y, "g_w": gd.w,
              "g_uu": gd.uu}
    for label, val in checks.items():
        if np.any(np.asarray(val) != 0):
            raise ValueError(f"linear sensitivity oracle needs {label} = 0")
    S = solution_operator(prob, base, w)
    H = S.T @ (np.ravel(Ld.yy)[:, None] * S)
    active = np.ravel(prob.g(y, u, wi) >= -active_tol)
    inactive = ~active
    dw = np.ravel(direction.interior)
    cuu = np.ravel(Ld.uu)
    du = np.zeros_like(dw)
    I = np.nonzero(inactive)[0]
    if I.size:
        M = H[np.ix_(I, I)] + np.diag(cuu[I])
        du[I] = np.linalg.solve(M, -(H @ dw)[I])
    de = np.zeros_like(dw)
    gu = np.ravel(np.broadcast_to(gd.u, y.shape))
    de[active] = -(H @ (du + dw))[active] / gu[active]
    shape = y.shape
    du_f, de_f = prob.field(du.reshape(shape)), prob.field(de.reshape(shape))
    return {"du": du_f, "de": de_f, "du_l2": norm(du_f, "L2Q"), "de_l2": norm(de_f, "L2Q")}
