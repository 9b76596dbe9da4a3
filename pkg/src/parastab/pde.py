"""State, linearised-state and adjoint solvers (backward Euler in time).

The adjoint solver marches the exact transpose of the linearised stepping, so
``<S v, r> = <v, S* r>`` holds to rounding. Its terminal condition sits one
step past the horizon (``phi^{nt+1} = 0``); level ``n`` of the adjoint is the
multiplier of time step ``n``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discrete import DiscreteProblem, discretize
from .grid import GridField, y_norm

NEWTON_RTOL = 1e-12
NEWTON_MAX_ITERS = 25


class SolverError(RuntimeError):
    """Base class for solver failures."""


class NewtonError(SolverError):
    def __init__(self, step: int, residual: float, reason: str = "no convergence"):
        super().__init__(f"state Newton failed at step {step}: {reason} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


class SingularStepError(SolverError):
    def __init__(self, step: int):
        super().__init__(f"singular step matrix at time step {step}")
        self.step = step


@dataclass
class SolveReport:
    newton_iters_max: int
    newton_iters_mean: float
    residual: float
    wall_time: float


def _factor(mat, step: int):
    try:
        return spla.splu(sp.csc_matrix(mat))
    except RuntimeError:
        raise SingularStepError(step) from None


def solve_state(problem, u: GridField, w: GridField, tol: float = NEWTON_RTOL,
                max_iters: int = NEWTON_MAX_ITERS):
    """Solve ``(I + tau A) y^n + tau f(y^n, w^n) = y^{n-1} + tau (u^n + w^n)``.

    Newton with the f_y Jacobian per step, halving the step while the
    residual grows. Returns ``(y, SolveReport)``.
    """
    prob = discretize(problem, u.mesh)
    mesh = prob.mesh
    mesh.require_same(u.mesh)
    mesh.require_same(w.mesh)
    start = time.perf_counter()
    tau = mesh.tau
    M0 = sp.identity(mesh.n_space, format="csc") + tau * prob.op.matrix
    linear_in_y = not prob.spec.f.depends_on("y")
    lu0 = _factor(M0, 1) if linear_in_y else None

    y = np.empty((mesh.nt + 1, mesh.n_space))
    y[0] = prob.y0
    iters, worst = [], 0.0
    for n in range(1, mesh.nt + 1):
        X = prob.X[n - 1] if mesh.dim == 1 else tuple(c[n - 1] for c in prob.X)
        t = prob.T[n - 1]
        wn = w.values[n]
        rhs = y[n - 1] + tau * (u.values[n] + wn)
        target = tol * (1.0 + np.max(np.abs(rhs)))

        def residual(z):
            return M0 @ z + tau * prob.spec.f(X, t, z, 0.0, wn) - rhs

        z = y[n - 1].copy()
        r = residual(z)
        nr = np.max(np.abs(r))
        k = 0
        while nr > target:
            if k >= max_iters:
                raise NewtonError(n, nr)
            if linear_in_y:
                dz = -lu0.solve(r)
            else:
                fy = prob.spec.f.derivs(X, t, z, 0.0, wn).y
                dz = -_factor(M0 + tau * sp.diags(fy), n).solve(r)
            s = 1.0
            while True:
                z_new = z + s * dz
                r_new = residual(z_new)
                nr_new = np.max(np.abs(r_new))
                if not np.isfinite(nr_new):
                    if s < 2.0**-30:
                        raise NewtonError(n, nr, "NaN in residual")
                elif nr_new < nr or s < 2.0**-30:
                    break
                s *= 0.5
            z, r, nr = z_new, r_new, nr_new
            k += 1
        if not np.all(np.isfinite(z)):
            raise NewtonError(n, nr, "NaN in iterate")
        y[n] = z
        iters.append(k)
        worst = max(worst, nr)
    report = SolveReport(max(iters), float(np.mean(iters)), float(worst),
                         time.perf_counter() - start)
    return GridField(mesh, y), report


def _step_matrices(prob: DiscreteProblem, ybar: GridField, wbar: GridField):
    mesh = prob.mesh
    fy = prob.f_derivs(ybar.interior, wbar.interior).y
    M0 = sp.identity(mesh.n_space, format="csc") + mesh.tau * prob.op.matrix
    if not prob.spec.f.depends_on("y"):
        lu = _factor(M0, 1)
        return [lu] * mesh.nt
    return [_factor(M0 + mesh.tau * sp.diags(fy[n]), n + 1) for n in range(mesh.nt)]


def solve_linearized(problem, ybar: GridField, wbar: GridField, v: GridField,
                     factors=None) -> GridField:
    """Solve ``zeta_t + A zeta + f_y(ybar, wbar) zeta = v``, ``zeta(0) = 0``."""
    prob = discretize(problem, ybar.mesh)
    mesh = prob.mesh
    mesh.require_same(v.mesh)
    lus = factors if factors is not None else _step_matrices(prob, ybar, wbar)
    z = np.zeros((mesh.nt + 1, mesh.n_space))
    for n in range(1, mesh.nt + 1):
        z[n] = lus[n - 1].solve(z[n - 1] + mesh.tau * v.values[n])
    return GridField(mesh, z)


def solve_adjoint(problem, y: GridField, u: GridField, w: GridField, e: GridField | None = None,
                  source: GridField | None = None, factors=None) -> GridField:
    """Backward solve of ``-phi_t + A phi + f_y phi = -L_y - e g_y``.

    With ``source`` given, it replaces the right-hand side (used to apply the
    transpose of :func:`solve_linearized`).
    """
    prob = discretize(problem, y.mesh)
    mesh = prob.mesh
    for fld in (u, w):
        mesh.require_same(fld.mesh)
    if source is None:
        rhs = -prob.L_derivs(y.interior, u.interior, w.interior).y
        if e is not None:
            rhs = rhs - e.interior * prob.g_derivs(y.interior, u.interior, w.interior).y
    else:
        mesh.require_same(source.mesh)
        rhs = source.interior
    lus = factors if factors is not None else _step_matrices(prob, y, w)
    phi = np.zeros((mesh.nt + 2, mesh.n_space))  # row nt+1 is the terminal zero
    for n in range(mesh.nt, 0, -1):
        phi[n] = lus[n - 1].solve(phi[n + 1] + mesh.tau * rhs[n - 1])
    return GridField(mesh, phi[: mesh.nt + 1])


def linearized_matrix(prob: DiscreteProblem, fy: np.ndarray) -> sp.csr_matrix:
    """Global matrix B of the linearised stepping, acting on levels 1..nt stacked.

    Block n has diagonal ``I/tau + A + diag(f_y^n)`` and subdiagonal ``-I/tau``.
    """
    mesh = prob.mesh
    nt, ns, tau = mesh.nt, mesh.n_space, mesh.tau
    main = sp.kron(sp.identity(nt), sp.identity(ns) / tau + prob.op.matrix)
    sub = sp.kron(sp.diags(np.ones(nt - 1), -1, shape=(nt, nt)), sp.identity(ns) / tau)
    return sp.csr_matrix(main + sp.diags(np.ravel(fy)) - sub)


def state_residual(problem, y: GridField, u: GridField, w: GridField) -> np.ndarray:
    """Pointwise residual of the discrete state equation on levels 1..nt."""
    prob = discretize(problem, y.mesh)
    mesh = prob.mesh
    r = np.diff(y.values, axis=0) / mesh.tau + (prob.op.matrix @ y.interior.T).T
    r += prob.f(y.interior, w.interior) - u.interior - w.interior
    # initial condition mismatch enters the first step
    r[0] += (y.values[0] - prob.y0) / mesh.tau
    return r


def adjoint_residual(problem, y, u, w, phi: GridField, e: GridField) -> np.ndarray:
    prob = discretize(problem, y.mesh)
    mesh = prob.mesh
    fy = prob.f_derivs(y.interior, w.interior).y
    p = phi.interior
    nxt = np.vstack([p[1:], np.zeros((1, mesh.n_space))])
    r = (p - nxt) / mesh.tau + (prob.op.matrix @ p.T).T + fy * p
    r += prob.L_derivs(y.interior, u.interior, w.interior).y
    r += e.interior * prob.g_derivs(y.interior, u.interior, w.interior).y
    return r


def lipschitz_solution_map_check(problem, base, trials, mesh=None):
    """Ratios ``||y' - y||_Y / (||u' - u||_inf + ||w' - w||_inf)`` per trial.

    Trials with zero input distance are skipped (ratio ``None``); trials whose
    forward solve fails are marked invalid. Returns a dict with ``ratios``,
    ``status`` and ``max_ratio``.
    """
    u, w = base
    prob = discretize(problem, u.mesh if mesh is None else mesh)
    y, _ = solve_state(prob, u, w)
    ratios, status = [], []
    for u2, w2 in trials:
        dist = np.max(np.abs(u2.values - u.values)) + np.max(np.abs(w2.values - w.values))
        if dist == 0:
            ratios.append(None)
            status.append("skipped")
            continue
        try:
            y2, _ = solve_state(prob, u2, w2)
        except SolverError:
            ratios.append(None)
            status.append("invalid")
            continue
        ratios.append(y_norm(y2 - y, prob.op) / dist)
        status.append("ok")
    valid = [r for r in ratios if r is not None]
    return {"ratios": ratios, "status": status, "max_ratio": max(valid) if valid else None}
