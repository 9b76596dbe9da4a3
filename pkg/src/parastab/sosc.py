"""Second-order form, coercivity constant and Legendre constant.

The critical directions are ``(S v, v)`` with ``S`` the linearised state
solve; no active-set restriction is applied to v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .discrete import DiscreteProblem, discretize
from .grid import GridField
from .kkt import KktPoint
from .pde import _step_matrices, linearized_matrix, solve_adjoint, solve_linearized

DENSE_LIMIT = 2000
KRYLOV_DIM = 128


@dataclass
class CoercivityReport:
    alpha: float
    rho: float
    witness_v: GridField
    method: str
    alpha_tol: float
    verdict: str

    @property
    def positive(self) -> bool:
        return self.verdict == "SOSC holds"

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "rho": self.rho, "method": self.method,
                "alpha_tol": self.alpha_tol, "verdict": self.verdict}


def form_coefficients(prob: DiscreteProblem, point: KktPoint, w: GridField, phi=None, e=None):
    """Pointwise (c_yy, c_yu, c_uu) of the Lagrangian Hessian on levels 1..nt."""
    y, u, wi = point.y.interior, point.u.interior, w.interior
    phi = point.phi.interior if phi is None else phi
    e = point.e.interior if e is None else e
    Ld = prob.L_derivs(y, u, wi)
    gd = prob.g_derivs(y, u, wi)
    fyy = prob.f_derivs(y, wi).yy
    return (Ld.yy + e * gd.yy + phi * fyy, Ld.yu + e * gd.yu, Ld.uu + e * gd.uu)


def quadratic_form(problem, point: KktPoint, w: GridField, zeta: GridField, v: GridField) -> float:
    """Discrete quadrature of the second-order form at (zeta, v)."""
    prob = discretize(problem, point.y.mesh)
    for fld in (w, zeta, v):
        prob.mesh.require_same(fld.mesh)
    cyy, cyu, cuu = form_coefficients(prob, point, w)
    z, vv = zeta.interior, v.interior
    return float(np.sum(cyy * z * z + 2 * cyu * z * vv + cuu * vv * vv) * prob.weight)


def solution_operator(prob: DiscreteProblem, point: KktPoint, w: GridField) -> np.ndarray:
    """Dense S from the global linearised matrix (independent of time marching)."""
    fy = prob.f_derivs(point.y.interior, w.interior).y
    B = linearized_matrix(prob, fy).toarray()
    return sla.solve(B, np.eye(B.shape[0]))


def reduced_hessian(S: np.ndarray, coeffs) -> np.ndarray:
    """H with Q(Sv, v) = tau h^d v^T H v."""
    cyy, cyu, cuu = (np.ravel(c) for c in coeffs)
    H = S.T @ (cyy[:, None] * S) + S.T * cyu[None, :] + cyu[:, None] * S + np.diag(cuu)
    return 0.5 * (H + H.T)


def _verdict(alpha: float, rho: float, tol: float) -> str:
    if alpha < -tol or rho < 0:
        return "SOSC fails"
    if alpha > tol and rho > 0:
        return "SOSC holds"
    return "indeterminate"


def _alpha_tol(coeffs) -> float:
    scale = max(float(np.max(np.abs(c))) for c in coeffs)
    return 1e-8 * max(scale, 1e-300)


def coercivity(problem, point: KktPoint, w: GridField, method: str = "auto") -> CoercivityReport:
    """Smallest Rayleigh quotient of v -> Q(Sv, v) / ||v||^2 and the Legendre constant.

    ``method`` is ``dense`` (symmetric eigensolve of the assembled reduced
    Hessian), ``iterative`` (Lanczos on matrix-free products through the
    state and adjoint solvers) or ``auto``.
    """
    prob = discretize(problem, point.y.mesh)
    mesh = prob.mesh
    N = mesh.n_control
    coeffs = form_coefficients(prob, point, w)
    rho = float(np.min(coeffs[2]))
    if method == "auto":
        method = "dense" if N <= DENSE_LIMIT else "iterative"
    if method == "dense" or N < 3:
        method = "dense"
        H = reduced_hessian(solution_operator(prob, point, w), coeffs)
        vals, vecs = np.linalg.eigh(H)
        alpha, vec = float(vals[0]), vecs[:, 0]
    elif method == "iterative":
        op = _matrix_free_operator(prob, point, w, coeffs)
        # the bottom of the spectrum clusters near min c_uu, which stalls the
        # default 2k+1 Lanczos basis; a wide basis restarts far less often
        vals, vecs = spla.eigsh(op, k=1, which="SA", tol=1e-13, maxiter=20 * N,
                                ncv=min(N, KRYLOV_DIM), v0=np.ones(N) / np.sqrt(N))
        alpha, vec = float(vals[0]), vecs[:, 0]
    else:
        raise ValueError(f"unknown method {method!r}")
    witness = prob.field(vec.reshape(mesh.nt, mesh.n_space))
    tol = _alpha_tol(coeffs)
    return CoercivityReport(alpha, rho, witness, method, tol, _verdict(alpha, rho, tol))


def _matrix_free_operator(prob, point, w, coeffs):
    mesh = prob.mesh
    cyy, cyu, cuu = coeffs
    lus = _step_matrices(prob, point.y, w)
    shape = (mesh.nt, mesh.n_space)

    def matvec(x):
        v = prob.field(np.reshape(x, shape))
        z = solve_linearized(prob, point.y, w, v, factors=lus).interior
        src = prob.field(cyy * z + cyu * v.interior)
        adj = solve_adjoint(prob, point.y, point.u, w, source=src, factors=lus).interior
        return np.ravel(adj + cyu * z + cuu * v.interior)

    N = mesh.n_control
    return spla.LinearOperator((N, N), matvec=matvec, dtype=float)


def coercivity_under_multiplier_perturbation(problem, point: KktPoint, w: GridField,
                                             dphi: float, de: float, trials: int = 20,
                                             seed: int = 0) -> dict:
    """Min coercivity constant over sampled (phi', e') in sup-norm balls.

    Samples come in antithetic pairs from a fixed seed, so shrinking the radii
    rescales the same perturbation directions.
    """
    prob = discretize(problem, point.y.mesh)
    S = solution_operator(prob, point, w)
    base_coeffs = form_coefficients(prob, point, w)
    alpha = float(np.linalg.eigvalsh(reduced_hessian(S, base_coeffs))[0])
    rng = np.random.default_rng(seed)
    shape = point.phi.interior.shape
    alphas = []
    for _ in range(max(1, (trials + 1) // 2)):
        rp, re = rng.uniform(-1.0, 1.0, shape), rng.uniform(-1.0, 1.0, shape)
        for sign in (1.0, -1.0):
            coeffs = form_coefficients(prob, point, w,
                                       phi=point.phi.interior + sign * dphi * rp,
                                       e=point.e.interior + sign * de * re)
            alphas.append(float(np.linalg.eigvalsh(reduced_hessian(S, coeffs))[0]))
    min_alpha = min(alphas)
    return {"alpha": alpha, "min_alpha": min_alpha, "alphas": alphas,
            "retained": min_alpha >= 0.5 * alpha, "dphi": dphi, "de": de}
