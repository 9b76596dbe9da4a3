import numpy as np
import pytest

from parastab.fixtures import SEMILINEAR_F, semilinear_problem
from parastab.grid import GridField, MeshQ
from parastab.model import (EllipticCoefficients, ProblemSpec, SpatialDomain, audit, audit_h1,
                            audit_h2_h3, audit_h4)


def spec_with(f="0", g="u - 1", L="0.5*u^2", y0="0", T=1.0, a="1"):
    return ProblemSpec.from_strings(SpatialDomain.interval(), T, a, y0=y0, L=L, f=f, g=g)


class TestDomain:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            SpatialDomain.interval(1.0, 1.0)

    def test_rectangle_measure(self):
        assert SpatialDomain.rectangle((0, 2), (1, 4)).measure == 6.0

    def test_y0_must_vanish_on_boundary(self):
        with pytest.raises(ValueError, match="vanish"):
            spec_with(y0="1 + x")

    def test_f_may_not_depend_on_u(self):
        with pytest.raises(ValueError):
            spec_with(f="y*u")


class TestAuditH1:
    @pytest.mark.parametrize("a, expected", [("1", 1.0), ("2 + sin(x)", 2.0)])
    def test_constant_and_monotone(self, a, expected):
        coeffs = EllipticCoefficients.from_table(a, 1)
        assert audit_h1(coeffs, SpatialDomain.interval()) == pytest.approx(expected, abs=1e-12)

    def test_degenerate(self):
        coeffs = EllipticCoefficients.from_table("x", 1)
        assert audit_h1(coeffs, SpatialDomain.interval()) == pytest.approx(0.0, abs=1e-12)

    def test_nonsymmetric_table_rejected(self):
        coeffs = EllipticCoefficients.from_table([["1", "x"], ["0", "1"]], 2)
        with pytest.raises(ValueError, match="symmetric"):
            audit_h1(coeffs, SpatialDomain.rectangle())

    def test_anisotropic_min_eigenvalue(self):
        coeffs = EllipticCoefficients.from_table([["2", "1"], ["1", "2"]], 2)
        assert audit_h1(coeffs, SpatialDomain.rectangle()) == pytest.approx(1.0)


class TestAuditH2H3:
    def test_semilinear_bound(self):
        # f_y <= 1 + 7^4 + 1 on |x| <= 1, t <= 7; f_w = 2yw <= 2M^2
        rep = audit_h2_h3(semilinear_problem(T=7.0), M=1.0)
        assert 0 < rep["k_fM"] <= max(7**4 + 1 + 1, 2)
        assert rep["C_f"] >= 0
        assert rep["diverging"] == []

    def test_zero_f(self):
        rep = audit_h2_h3(spec_with(f="0"))
        assert rep["C_f"] == 0 and rep["k_fM"] == 0

    def test_deterministic(self):
        spec = semilinear_problem()
        assert audit_h2_h3(spec, seed=3) == audit_h2_h3(spec, seed=3)


class TestAuditH4:
    def setup_method(self):
        self.mesh = MeshQ(SpatialDomain.interval(), 1.0, 5, 4)
        rng = np.random.default_rng(0)
        self.fields = [GridField(self.mesh, rng.uniform(-2, 2, (5, 5))) for _ in range(3)]

    def test_affine_constraint(self):
        assert audit_h4(spec_with(g="u + w"), *self.fields) == 1.0

    def test_nonlinear_constraint_bounded_below(self):
        spec = spec_with(g="sin(x)*t + w^4*u^3 + (y^2 + 1)*u")
        assert audit_h4(spec, *self.fields) >= 1.0

    def test_vanishing_derivative(self):
        y = self.mesh.zeros()
        assert audit_h4(spec_with(g="y*u"), y, *self.fields[1:]) == 0.0

    def test_full_report(self):
        spec = ProblemSpec.from_strings(SpatialDomain.interval(), 1.0, "1", y0="sin(pi*x)",
                                        L="0.5*u^2", f=SEMILINEAR_F, g="u + w")
        rep = audit(spec, *self.fields)
        assert all(rep.passes.values())
        assert rep.to_dict() == audit(spec, *self.fields).to_dict()
