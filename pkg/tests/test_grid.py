import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parastab.grid import (NORMS, GridField, MeshQ, assemble_operator, norm, read_field,
                           write_field)
from parastab.model import EllipticCoefficients, SpatialDomain

UNIT = SpatialDomain.interval()


def op1d(a="1", nx=3):
    mesh = MeshQ(UNIT, 1.0, nx, 2)
    return mesh, assemble_operator(EllipticCoefficients.from_table(a, 1), mesh)


class TestOperator:
    def test_standard_stencil(self):
        _, op = op1d(nx=3)
        expected = 16 * np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 2]])
        np.testing.assert_array_equal(op.matrix.toarray(), expected)

    def test_exact_on_quadratics(self):
        mesh, op = op1d(nx=9)
        x = mesh.nodes
        np.testing.assert_allclose(op.apply(x * (1 - x)), 2.0, rtol=1e-12)

    @pytest.mark.parametrize("a", ["1 + x^2", "2 + sin(3*x)", "exp(x)"])
    def test_symmetric_1d(self, a):
        _, op = op1d(a, nx=11)
        M = op.matrix.toarray()
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M)[0] > 0

    def test_symmetric_2d_with_cross_terms(self):
        dom = SpatialDomain.rectangle()
        coeffs = EllipticCoefficients.from_table([["1 + x1", "0.3*x2"], ["0.3*x2", "2"]], 2)
        op = assemble_operator(coeffs, MeshQ(dom, 1.0, 5, 2))
        M = op.matrix.toarray()
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M)[0] > 0

    def test_2d_second_order_on_product_sines(self):
        dom = SpatialDomain.rectangle()
        coeffs = EllipticCoefficients.from_table("1", 2)
        errs = []
        for nx in (15, 31):
            mesh = MeshQ(dom, 1.0, nx, 1)
            op = assemble_operator(coeffs, mesh)
            x1, x2 = mesh.nodes
            v = np.sin(np.pi * x1) * np.sin(np.pi * x2)
            errs.append(np.max(np.abs(op.apply(v) - 2 * np.pi**2 * v)))
        assert np.log2(errs[0] / errs[1]) > 1.8

    def test_rayleigh_quotient_of_eigenfunction(self):
        mesh = MeshQ(UNIT, 1.0, 64, 4)
        op = assemble_operator(EllipticCoefficients.from_table("1", 1), mesh)
        v = mesh.sample(lambda X, T: np.sin(np.pi * X))
        Av = GridField(mesh, (op.matrix @ v.values.T).T)
        assert norm(Av) / norm(v) == pytest.approx(np.pi**2, rel=0.02)


class TestNorms:
    mesh = MeshQ(UNIT, 1.0, 7, 5)
    op = assemble_operator(EllipticCoefficients.from_table("1", 1), mesh)

    def test_constant(self):
        # L2Q sums levels 1..nt, so a constant c on the unit interval gives |c| up to the boundary strip
        v = GridField(self.mesh, np.full((6, 7), -3.0))
        assert norm(v, "LinfQ") == 3.0
        assert norm(v, "L2Q") == pytest.approx(3.0 * np.sqrt(7 / 8))

    @pytest.mark.parametrize("which", NORMS)
    def test_zero(self, which):
        assert norm(self.mesh.zeros(), which, self.op) == 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5), st.integers(0, 2**31))
    def test_homogeneous(self, c, seed):
        v = GridField(self.mesh, np.random.default_rng(seed).standard_normal((6, 7)))
        for which in NORMS:
            assert norm(v * c, which, self.op) == pytest.approx(abs(c) * norm(v, which, self.op),
                                                                rel=1e-12, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_triangle(self, seed):
        rng = np.random.default_rng(seed)
        a, b = (GridField(self.mesh, rng.standard_normal((6, 7))) for _ in range(2))
        for which in NORMS:
            assert norm(a + b, which, self.op) <= norm(a, which, self.op) + norm(b, which, self.op) + 1e-12

    def test_summation_by_parts(self, rng):
        u, v = rng.standard_normal((2, 7))
        A = self.op.matrix
        assert (A @ u) @ v == pytest.approx(u @ (A @ v), rel=1e-14)

    def test_mesh_mismatch(self):
        other = MeshQ(UNIT, 1.0, 7, 6)
        with pytest.raises(ValueError):
            self.mesh.zeros() + other.zeros()


class TestFieldFiles:
    def test_bit_exact_roundtrip(self, tmp_path, rng):
        mesh = MeshQ(UNIT, 0.7, 6, 3)
        fld = GridField(mesh, rng.standard_normal((4, 6)) * 10.0 ** rng.integers(-20, 20, (4, 6)))
        path = os.path.join(tmp_path, "f.grid")
        write_field(path, fld)
        back = read_field(path, mesh)
        assert np.array_equal(back.values, fld.values)
        with open(path) as fh:
            assert fh.readline().split()[:2] == ["6", "3"]

    def test_header_mismatch(self, tmp_path):
        mesh = MeshQ(UNIT, 1.0, 4, 4)
        path = os.path.join(tmp_path, "f.grid")
        write_field(path, mesh.zeros())
        with pytest.raises(ValueError):
            read_field(path, MeshQ(UNIT, 1.0, 4, 5))

    def test_nonfinite_rejected(self):
        mesh = MeshQ(UNIT, 1.0, 2, 1)
        with pytest.raises(ValueError):
            GridField(mesh, np.array([[0.0, np.nan], [0.0, 0.0]]))
