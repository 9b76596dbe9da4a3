"""Space-time lattice, the discrete elliptic operator, grid fields and norms.

Unknowns live at interior nodes only (homogeneous Dirichlet data). A field
holds one row per time level ``n = 0..nt``. Space-time integrals use the
right-endpoint rule in time, i.e. levels ``1..nt`` with weight ``tau * h^d``,
which is the quadrature the backward Euler scheme induces.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .model import EllipticCoefficients, SpatialDomain

NORMS = ("L2Q", "LinfQ", "W112", "C0V", "L2H1")


@dataclass(frozen=True)
class MeshQ:
    domain: SpatialDomain
    T: float
    nx: int
    nt: int

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.nt) < 1:
            raise ValueError("nx and nt must be >= 1")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @cached_property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (self.nx + 1) for lo, hi in self.domain.bounds)

    @property
    def h(self) -> float:
        return self.spacing[0]

    @property
    def tau(self) -> float:
        return self.T / self.nt

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_space(self) -> int:
        return self.nx**self.dim

    @property
    def n_control(self) -> int:
        return self.n_space * self.nt

    @cached_property
    def axes(self) -> tuple:
        return tuple(
            lo + h * np.arange(1, self.nx + 1)
            for (lo, _), h in zip(self.domain.bounds, self.spacing)
        )

    @cached_property
    def nodes(self):
        """Interior node coordinates as an ``x`` argument for ScalarFn2."""
        if self.dim == 1:
            return self.axes[0]
        X1, X2 = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return (X1.ravel(), X2.ravel())

    @cached_property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.nt + 1)

    def lattice(self, all_levels: bool = False):
        """Broadcast (x, t) over levels 1..nt (or 0..nt), shape (levels, n_space)."""
        t = self.times if all_levels else self.times[1:]
        T = np.repeat(t[:, None], self.n_space, axis=1)
        if self.dim == 1:
            X = np.broadcast_to(self.nodes, T.shape).copy()
        else:
            X = tuple(np.broadcast_to(c, T.shape).copy() for c in self.nodes)
        return X, T

    def require_same(self, other: "MeshQ"):
        if other is not self and other != self:
            raise ValueError("fields live on different meshes")

    def zeros(self) -> "GridField":
        return GridField(self, np.zeros((self.nt + 1, self.n_space)))

    def sample(self, fn, levels0: bool = True) -> "GridField":
        """Sample a function of (x, t) at every lattice point."""
        X, T = self.lattice(all_levels=True)
        vals = np.asarray(fn(X, T), dtype=float)
        vals = np.broadcast_to(vals, T.shape).copy()
        if not levels0:
            vals[0] = 0.0
        return GridField(self, vals)

    @cached_property
    def difference_matrices(self) -> tuple:
        """Per-axis forward differences onto all edges, boundary nodes dropped."""
        n, d = self.nx, self.dim
        mats = []
        for axis in range(d):
            h = self.spacing[axis]
            D1 = sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n)) / h
            if d == 1:
                mats.append(D1.tocsr())
            elif axis == 0:
                mats.append(sp.kron(D1, sp.identity(n)).tocsr())
            else:
                mats.append(sp.kron(sp.identity(n), D1).tocsr())
        return tuple(mats)

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return sum(D.T @ D for D in self.difference_matrices).tocsr()


@dataclass(eq=False)
class GridField:
    """Real values ``v[n, i]`` at time level n and interior node i."""

    mesh: MeshQ
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.mesh.nt + 1, self.mesh.n_space)
        if self.values.shape != shape:
            raise ValueError(f"field shape {self.values.shape} does not match mesh {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def copy(self) -> "GridField":
        return GridField(self.mesh, self.values.copy())

    def _other(self, other):
        if isinstance(other, GridField):
            self.mesh.require_same(other.mesh)
            return other.values
        return other

    def __add__(self, other):
        return GridField(self.mesh, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridField(self.mesh, self.values - self._other(other))

    def __rsub__(self, other):
        return GridField(self.mesh, self._other(other) - self.values)

    def __mul__(self, other):
        return GridField(self.mesh, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.mesh, -self.values)

    @property
    def interior(self) -> np.ndarray:
        """Levels 1..nt, the quadrature lattice."""
        return self.values[1:]


@dataclass(frozen=True)
class DiscreteOperator:
    mesh: MeshQ
    matrix: sp.csr_matrix

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Apply A to each row (time level) of ``v``."""
        return (self.matrix @ np.atleast_2d(v).T).T.reshape(np.shape(v))


def assemble_operator(coeffs: EllipticCoefficients, mesh: MeshQ) -> DiscreteOperator:
    """Flux-form finite differences for ``A y = -sum_ij D_j(a_ij D_i y)``.

    Diagonal coefficients are evaluated at edge midpoints; mixed terms use
    corner-averaged gradients. The result is ``G^T diag(a) G`` and hence exactly
    symmetric.
    """
    coeffs.require_symmetric()
    if coeffs.dim != mesh.dim:
        raise ValueError("coefficient dimension does not match the mesh")
    n = mesh.nx
    if mesh.dim == 1:
        (lo, _), h = mesh.domain.bounds[0], mesh.h
        mid = lo + h * (np.arange(n + 1) + 0.5)
        D = mesh.difference_matrices[0]
        A = D.T @ sp.diags(coeffs.evaluate(mid, 0, 0)) @ D
        return DiscreteOperator(mesh, sp.csr_matrix(A))

    (lo1, _), (lo2, _) = mesh.domain.bounds
    h1, h2 = mesh.spacing
    e_full = lo1 + h1 * np.arange(n + 2)  # includes boundary nodes
    f_full = lo2 + h2 * np.arange(n + 2)
    Dx, Dy = mesh.difference_matrices
    # x-edges: midpoint between (i, j) and (i+1, j), j interior
    xm = lo1 + h1 * (np.arange(n + 1) + 0.5)
    X, Y = np.meshgrid(xm, f_full[1:-1], indexing="ij")
    a11 = coeffs.evaluate((X.ravel(), Y.ravel()), 0, 0)
    ym = lo2 + h2 * (np.arange(n + 1) + 0.5)
    X, Y = np.meshgrid(e_full[1:-1], ym, indexing="ij")
    a22 = coeffs.evaluate((X.ravel(), Y.ravel()), 1, 1)
    A = Dx.T @ sp.diags(a11) @ Dx + Dy.T @ sp.diags(a22) @ Dy
    if not (coeffs.a[0][1].text == "0" and coeffs.a[1][0].text == "0"):
        # corner gradients at (i + 1/2, j + 1/2), i, j = 0..n
        avg = sp.diags([np.full(n, 0.5), np.full(n, 0.5)], [0, -1], shape=(n + 1, n))
        dif = sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n))
        Cx = sp.kron(dif / h1, avg).tocsr()
        Cy = sp.kron(avg, dif / h2).tocsr()
        X, Y = np.meshgrid(xm, ym, indexing="ij")
        a12 = coeffs.evaluate((X.ravel(), Y.ravel()), 0, 1)
        A = A + Cx.T @ sp.diags(a12) @ Cy + Cy.T @ sp.diags(a12) @ Cx
    return DiscreteOperator(mesh, sp.csr_matrix(A))


def inner(a: GridField, b: GridField) -> float:
    """Discrete L2(Q) inner product over levels 1..nt."""
    a.mesh.require_same(b.mesh)
    m = a.mesh
    return float(np.sum(a.interior * b.interior) * m.cell * m.tau)


def _h1_seminorms(v: np.ndarray, mesh: MeshQ) -> np.ndarray:
    """Discrete H1_0 seminorm of each row."""
    energy = np.sum(v * (mesh.laplacian @ v.T).T, axis=1)
    return np.sqrt(np.maximum(energy, 0.0) * mesh.cell)


def norm(fld: GridField, which: str = "L2Q", operator: DiscreteOperator | None = None) -> float:
    """Discrete norms on Q.

    ``L2Q``: (sum v^2 h^d tau)^(1/2) over levels 1..nt. ``LinfQ``: max |v|.
    ``W112``: ||dt v|| + ||A v|| + ||v|| in L2Q, dt the backward difference.
    ``C0V``: max over levels of the discrete H1_0 seminorm.
    ``L2H1``: L2 in time of the discrete H1_0 seminorm.
    ``operator`` defaults to the unit-coefficient Laplacian.
    """
    m = fld.mesh
    if operator is not None:
        m.require_same(operator.mesh)
    v = fld.values
    w = m.cell * m.tau
    if which == "L2Q":
        return float(np.sqrt(np.sum(v[1:] ** 2) * w))
    if which == "LinfQ":
        return float(np.max(np.abs(v)))
    if which == "W112":
        A = operator.matrix if operator is not None else m.laplacian
        dt = np.diff(v, axis=0) / m.tau
        Av = (A @ v[1:].T).T
        return float(np.sqrt(np.sum(dt**2) * w) + np.sqrt(np.sum(Av**2) * w)
                     + np.sqrt(np.sum(v[1:] ** 2) * w))
    if which == "C0V":
        return float(np.max(_h1_seminorms(v, m)))
    if which == "L2H1":
        return float(np.sqrt(np.sum(_h1_seminorms(v[1:], m) ** 2) * m.tau))
    raise ValueError(f"unknown norm {which!r}; choose from {NORMS}")


def parabolic_residual_norm(fld: GridField, operator: DiscreteOperator) -> float:
    """||dt v + A v||_{L2Q}, the p = 2 surrogate of the graph-norm term."""
    m = fld.mesh
    v = fld.values
    r = np.diff(v, axis=0) / m.tau + (operator.matrix @ v[1:].T).T
    return float(np.sqrt(np.sum(r**2) * m.cell * m.tau))


def y_norm(fld: GridField, operator: DiscreteOperator) -> float:
    """State-space norm: W112 + LinfQ + ||dt v + A v||_{L2Q}."""
    return norm(fld, "W112", operator) + norm(fld, "LinfQ") + parabolic_residual_norm(fld, operator)


# --- file format -------------------------------------------------------------


def write_field(path, fld: GridField):
    """Header ``nx nt h tau`` then one line per time level, shortest round-trip floats."""
    m = fld.mesh
    lines = [f"{m.nx} {m.nt} {m.h!r} {m.tau!r}"]
    for row in fld.values:
        lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_raw(path):
    """Return ``(nx, nt, h, tau, values)`` without a mesh."""
    with open(path, encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty grid file")
    head = lines[0].split()
    if len(head) != 4:
        raise ValueError(f"{path}: header must be 'nx nt h tau'")
    try:
        nx, nt = int(head[0]), int(head[1])
        h, tau = float(head[2]), float(head[3])
        rows = [[float(tok) for tok in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise ValueError(f"{path}: malformed grid file ({exc})") from None
    if len(rows) != nt + 1 or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: expected {nt + 1} rows of equal length")
    return nx, nt, h, tau, np.array(rows)


def read_field(path, mesh: MeshQ) -> GridField:
    nx, nt, h, tau, values = read_field_raw(path)
    if (nx, nt) != (mesh.nx, mesh.nt) or h != mesh.h or tau != mesh.tau:
        raise ValueError(
            f"{path}: grid header ({nx}, {nt}, {h!r}, {tau!r}) does not match mesh "
            f"({mesh.nx}, {mesh.nt}, {mesh.h!r}, {mesh.tau!r})"
        )
    return GridField(mesh, values)
