"""A problem bound to a mesh: operator, lattice coordinates and pointwise data."""

from __future__ import annotations

import numpy as np

from .grid import GridField, MeshQ, assemble_operator, read_field
from .expr import ScalarFn2
from .model import ProblemSpec


class DiscreteProblem:
    """``spec`` discretised on ``mesh``; immutable after construction.

    Pointwise evaluations act on arrays of shape ``(nt, n_space)``, i.e. the
    control lattice of levels 1..nt.
    """

    def __init__(self, spec: ProblemSpec, mesh: MeshQ):
        if mesh.domain != spec.domain or mesh.T != spec.T:
            raise ValueError("mesh domain/horizon does not match the problem")
        self.spec = spec
        self.mesh = mesh
        self.op = assemble_operator(spec.coeffs, mesh)
        self.X, self.T = mesh.lattice()
        self.y0 = spec.y0(mesh.nodes, 0.0)
        self.weight = mesh.cell * mesh.tau

    def parameter(self) -> GridField:
        """The nominal parameter sampled on the mesh."""
        w = self.spec.w_ref
        if isinstance(w, GridField):
            self.mesh.require_same(w.mesh)
            return w.copy()
        if isinstance(w, ScalarFn2):
            return self.mesh.sample(lambda X, T: w(X, T))
        if isinstance(w, (str,)):
            return read_field(w, self.mesh)
        return GridField(self.mesh, np.full((self.mesh.nt + 1, self.mesh.n_space), float(w)))

    # pointwise data on levels 1..nt
    def f(self, y, w):
        return self.spec.f(self.X, self.T, y, 0.0, w)

    def f_derivs(self, y, w):
        return self.spec.f.derivs(self.X, self.T, y, 0.0, w)

    def L_derivs(self, y, u, w):
        return self.spec.L.derivs(self.X, self.T, y, u, w)

    def g(self, y, u, w):
        return self.spec.g(self.X, self.T, y, u, w)

    def g_derivs(self, y, u, w):
        return self.spec.g.derivs(self.X, self.T, y, u, w)

    def objective(self, y: GridField, u: GridField, w: GridField) -> float:
        """J = sum of L over the control lattice times tau * h^d."""
        vals = self.spec.L(self.X, self.T, y.interior, u.interior, w.interior)
        return float(np.sum(vals) * self.weight)

    def field(self, interior: np.ndarray, level0=None) -> GridField:
        """Wrap levels 1..nt into a GridField; level 0 is ``level0`` or zero."""
        vals = np.zeros((self.mesh.nt + 1, self.mesh.n_space))
        vals[1:] = interior
        if level0 is not None:
            vals[0] = level0
        return GridField(self.mesh, vals)


def discretize(problem, mesh: MeshQ | None = None) -> DiscreteProblem:
    if isinstance(problem, DiscreteProblem):
        if mesh is not None:
            problem.mesh.require_same(mesh)
        return problem
    if mesh is None:
        raise ValueError("a mesh is required to discretise a ProblemSpec")
    return DiscreteProblem(problem, mesh)
