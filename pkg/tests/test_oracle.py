import numpy as np
import pytest

from parastab.discrete import DiscreteProblem
from parastab.fixtures import semilinear_problem, lq_problem, zero_problem
from parastab.grid import MeshQ
from parastab.kkt import solve_ocp
from parastab.model import ProblemSpec, SpatialDomain
from parastab.oracle import (ConstraintActivationError, brute_force_small, build_manufactured,
                             fd_gradient_check, linear_sensitivity)

from conftest import make

UNIT = SpatialDomain.interval()


class TestManufactured:
    mesh = MeshQ(UNIT, 1.0, 16, 16)

    def test_unknown_recipe(self):
        with pytest.raises(ValueError):
            build_manufactured("bogus", self.mesh)

    @pytest.mark.parametrize("gain", [0.0, -5.0])
    def test_sign_violation_rejected(self, gain):
        with pytest.raises(ValueError, match="gain"):
            build_manufactured("lq_active_band", self.mesh, gain=gain)

    def test_inactive_recipe(self):
        case = build_manufactured("lq_inactive", self.mesh)
        assert np.all(case.e.values == 0) and not case.active.any()

    @pytest.mark.parametrize("recipe", ["lq_active_band", "semilinear_band"])
    def test_band(self, recipe):
        case = build_manufactured(recipe, self.mesh)
        x = np.broadcast_to(self.mesh.nodes, case.active.shape)
        np.testing.assert_array_equal(case.active, (x > 0.25) & (x < 0.75))
        e, u = case.e.interior, case.u.interior
        assert np.all(e[case.active] > 0) and np.all(e[~case.active] == 0)
        assert np.all(e * (u - 1.0) == 0)
        assert np.all(u <= 1.0)

    def test_sampled_parameter_is_bound_to_mesh(self):
        case = build_manufactured("lq_active_band", self.mesh)
        with pytest.raises(ValueError):
            DiscreteProblem(case.spec, MeshQ(UNIT, 1.0, 8, 8)).parameter()


class TestGradientCheck:
    def test_quadratic(self):
        prob, w = make(lq_problem(psi=None), 10, 10)
        u = prob.mesh.sample(lambda X, T: np.cos(X) * T)
        assert fd_gradient_check(prob, u, w, directions=5, step=1e-4) <= 1e-9

    def test_semilinear(self):
        prob, w = make(semilinear_problem())
        assert fd_gradient_check(prob, prob.mesh.zeros(), w, directions=5, step=1e-5) <= 1e-5

    def test_constant_objective(self):
        spec = ProblemSpec.from_strings(UNIT, 1.0, "1", y0="0", L="3", f="y^3", g="u - 1")
        prob, w = make(spec, 6, 6)
        assert fd_gradient_check(prob, prob.mesh.zeros(), w) == 0.0

    def test_active_constraint_detected(self):
        prob, w = make(lq_problem(psi="0"), 6, 6)
        with pytest.raises(ConstraintActivationError):
            fd_gradient_check(prob, prob.mesh.zeros(), w)


class TestBruteForce:
    def test_zero_problem(self):
        prob, w = make(zero_problem(), 3, 3)
        res = brute_force_small(prob, w)
        assert res.J == 0.0 and np.all(res.u.values == 0)

    def test_too_large(self):
        prob, w = make(lq_problem(), 4, 4)
        with pytest.raises(ValueError):
            brute_force_small(prob, w)

    @pytest.mark.parametrize("spec", [lq_problem(psi=None), lq_problem(), semilinear_problem()],
                             ids=lambda s: s.name)
    def test_agrees_with_newton(self, spec):
        prob, w = make(spec, 3, 3)
        pt = solve_ocp(prob, w)
        res = brute_force_small(prob, w)
        J = prob.objective(pt.y, pt.u, w)
        assert J == pytest.approx(res.J, rel=1e-6)
        g = prob.g(pt.y.interior, pt.u.interior, w.interior)
        np.testing.assert_array_equal(g >= -1e-8, res.active)


class TestLinearSensitivity:
    def test_rejects_nonlinear(self, semilinear_solved):
        prob, w, pt = semilinear_solved
        with pytest.raises(ValueError):
            linear_sensitivity(prob, pt, w, w)

    def test_matches_small_step(self, lq_solved):
        prob, w, pt = lq_solved
        d = prob.mesh.sample(lambda X, T: np.sin(np.pi * X) * T)
        sens = linear_sensitivity(prob, pt, w, d)
        moved = solve_ocp(prob, w + d * 1e-3, init=pt)
        np.testing.assert_allclose((moved.u - pt.u).interior / 1e-3, sens["du"].interior, atol=1e-8)
        np.testing.assert_allclose((moved.e - pt.e).interior / 1e-3, sens["de"].interior, atol=1e-8)
