import itertools

import numpy as np
import pytest

from parastab.discrete import DiscreteProblem
from parastab.fixtures import cubic_problem, semilinear_problem, lq_problem, zero_problem
from parastab.grid import GridField, MeshQ, inner, y_norm
from parastab.model import ProblemSpec, SpatialDomain
from parastab.oracle import build_manufactured
from parastab.pde import (NewtonError, lipschitz_solution_map_check, solve_adjoint,
                          solve_linearized, solve_state, state_residual)
from parastab.sosc import solution_operator

UNIT = SpatialDomain.interval()


def heat(T=0.1, y0="sin(pi*x)"):
    return ProblemSpec.from_strings(UNIT, T, "1", y0=y0, L="0.5*u^2", f="0", g="u - 1")


def heat_error(nx, nt, T=0.1):
    prob = DiscreteProblem(heat(T), MeshQ(UNIT, T, nx, nt))
    zero = prob.mesh.zeros()
    y, _ = solve_state(prob, zero, zero)
    X, Tt = prob.mesh.lattice(all_levels=True)
    return np.max(np.abs(y.values - np.exp(-np.pi**2 * Tt) * np.sin(np.pi * X)))


def slope(sizes, errors):
    return np.polyfit(np.log(sizes), np.log(errors), 1)[0]


class TestState:
    def test_zero(self):
        prob = DiscreteProblem(zero_problem(), MeshQ(UNIT, 1.0, 8, 8))
        y, rep = solve_state(prob, prob.mesh.zeros(), prob.mesh.zeros())
        assert np.all(y.values == 0) and rep.newton_iters_max == 0

    def test_heat_kernel_time_order(self):
        nts = [10, 20, 40]
        errs = [heat_error(200, nt) for nt in nts]
        assert slope([0.1 / n for n in nts], errs) >= 0.9

    def test_heat_kernel_space_order(self):
        nxs = [7, 15, 31]
        errs = [heat_error(nx, 4 * (nx + 1) ** 2) for nx in nxs]
        assert slope([1 / (n + 1) for n in nxs], errs) >= 1.8

    def test_residual_vanishes_at_solution(self):
        prob = DiscreteProblem(cubic_problem(), MeshQ(UNIT, 1.0, 10, 10))
        u = prob.mesh.sample(lambda X, T: 5 * np.sin(3 * X) * T)
        w = prob.parameter()
        y, rep = solve_state(prob, u, w)
        assert np.max(np.abs(state_residual(prob, y, u, w))) < 1e-10
        assert rep.residual <= 1e-12 * (1 + np.max(np.abs(y.values))) * 10

    def test_manufactured_state_converges(self):
        errs = []
        for nx in (15, 31):
            case = build_manufactured("semilinear_band", MeshQ(UNIT, 1.0, nx, nx))
            y, _ = solve_state(case.spec, case.u, case.w)
            errs.append(np.max(np.abs(y.values - case.y.values)))
        assert errs[1] < errs[0] / 3

    def test_newton_failure_reports_step(self):
        spec = ProblemSpec.from_strings(UNIT, 1.0, "1", y0="0", L="0.5*u^2",
                                        f="y^3*(1 + exp(y)^4)", g="u - 1")
        prob = DiscreteProblem(spec, MeshQ(UNIT, 1.0, 4, 2))
        u = GridField(prob.mesh, np.full((3, 4), 500.0))
        with pytest.raises(NewtonError) as info:
            solve_state(prob, u, prob.mesh.zeros(), max_iters=2)
        assert info.value.step == 1

    def test_bounded_under_scaling(self):
        # linear f: sup norm of y scales exactly with the data
        ratios = []
        for c in (0.25, 0.5, 1, 2, 4):
            spec = heat(1.0, y0=f"{c}*sin(pi*x)")
            prob = DiscreteProblem(spec, MeshQ(UNIT, 1.0, 8, 8))
            u = prob.mesh.sample(lambda X, T: c * np.cos(X) * T)
            w = prob.mesh.sample(lambda X, T: c * X + 0 * T)
            y, _ = solve_state(prob, u, w)
            data = np.max(np.abs(u.values)) + np.max(np.abs(w.values)) + np.max(np.abs(y.values[0]))
            ratios.append(np.max(np.abs(y.values)) / data)
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)


class TestLinearized:
    prob = DiscreteProblem(semilinear_problem(), MeshQ(UNIT, 1.0, 9, 7))

    def ybar(self):
        w = self.prob.parameter()
        y, _ = solve_state(self.prob, self.prob.mesh.sample(lambda X, T: X * T), w)
        return y, w

    def test_zero_source(self):
        y, w = self.ybar()
        assert np.all(solve_linearized(self.prob, y, w, self.prob.mesh.zeros()).values == 0)

    def test_linearity(self, rng):
        y, w = self.ybar()
        v1, v2 = (self.prob.field(rng.standard_normal((7, 9))) for _ in range(2))
        lhs = solve_linearized(self.prob, y, w, v1 * 2.0 + v2 * -3.0)
        rhs = solve_linearized(self.prob, y, w, v1) * 2.0 + solve_linearized(self.prob, y, w, v2) * -3.0
        np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-13)

    @staticmethod
    def _duhamel(nx, nt):
        prob = DiscreteProblem(heat(1.0), MeshQ(UNIT, 1.0, nx, nt))
        mesh = prob.mesh
        v = prob.field(np.broadcast_to(np.sin(np.pi * mesh.nodes), (nt, nx)))
        z = solve_linearized(prob, mesh.zeros(), mesh.zeros(), v)
        # sin(pi x) is an exact eigenvector of the three-point Laplacian
        lam = 4 / mesh.h**2 * np.sin(np.pi * mesh.h / 2) ** 2
        c = np.zeros(nt + 1)
        for n in range(1, nt + 1):
            c[n] = (c[n - 1] + mesh.tau) / (1 + mesh.tau * lam)
        np.testing.assert_allclose(z.values, np.outer(c, np.sin(np.pi * mesh.nodes)), atol=1e-14)
        return np.max(np.abs(c - (1 - np.exp(-np.pi**2 * mesh.times)) / np.pi**2))

    def test_discrete_duhamel(self):
        errs = [self._duhamel(nx, nt) for nx, nt in ((15, 32), (31, 64), (63, 128))]
        assert slope([1 / 32, 1 / 64, 1 / 128], errs) >= 0.9


class TestAdjoint:
    @pytest.mark.parametrize("spec", [semilinear_problem(), cubic_problem(), lq_problem()],
                             ids=lambda s: s.name)
    def test_transpose_identity(self, spec, rng):
        prob = DiscreteProblem(spec, MeshQ(UNIT, 1.0, 12, 10))
        w = prob.parameter()
        u = prob.mesh.sample(lambda X, T: np.sin(2 * X) * T)
        y, _ = solve_state(prob, u, w)
        for _ in range(20):
            v, r = (prob.field(rng.standard_normal((10, 12))) for _ in range(2))
            lhs = inner(solve_linearized(prob, y, w, v), r)
            rhs = inner(v, solve_adjoint(prob, y, u, w, source=r))
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs))

    def test_no_source(self):
        spec = ProblemSpec.from_strings(UNIT, 1.0, "1", y0="sin(pi*x)", L="0.5*u^2",
                                        f="y^3", g="u - 1")
        prob = DiscreteProblem(spec, MeshQ(UNIT, 1.0, 6, 6))
        z = prob.mesh.zeros()
        y, _ = solve_state(prob, z, z)
        assert np.all(solve_adjoint(prob, y, z, z, e=z).values == 0)

    def test_manufactured_adjoint_converges(self):
        errs = []
        for nx in (15, 31, 63):
            case = build_manufactured("semilinear_band", MeshQ(UNIT, 1.0, nx, nx + 1))
            phi = solve_adjoint(case.spec, case.y, case.u, case.w, e=case.e)
            errs.append(np.max(np.abs(phi.values - case.phi.values)))
        assert errs[0] > errs[1] > errs[2]
        assert slope([1 / 16, 1 / 32, 1 / 64], errs) >= 0.9


class TestLipschitzMap:
    def test_zero_distance_skipped(self):
        prob = DiscreteProblem(lq_problem(), MeshQ(UNIT, 1.0, 4, 4))
        u, w = prob.mesh.zeros(), prob.mesh.zeros()
        out = lipschitz_solution_map_check(prob, (u, w), [(u, w)])
        assert out["ratios"] == [None] and out["status"] == ["skipped"]

    def test_linear_map_operator_norm(self):
        # the Y-norm is convex, so its maximum over the unit sup-ball sits at a vertex
        prob = DiscreteProblem(lq_problem(), MeshQ(UNIT, 1.0, 3, 3))
        mesh = prob.mesh
        zero = mesh.zeros()
        S = solution_operator(prob, type("P", (), {"y": zero})(), zero)
        best = 0.0
        trials = []
        for signs in itertools.product((-1.0, 1.0), repeat=9):
            z = np.array(signs)
            zeta = prob.field((S @ z).reshape(3, 3))
            best = max(best, y_norm(zeta, prob.op))
            if len(trials) < 16:
                trials.append((prob.field(0.5 * z.reshape(3, 3)), prob.field(0.5 * z.reshape(3, 3))))
        out = lipschitz_solution_map_check(prob, (zero, zero), trials)
        assert out["max_ratio"] <= best * (1 + 1e-12)
        # the split between u and w does not matter for an additive source
        split = [(prob.field(z.interior * 2), zero) for z, _ in trials]
        again = lipschitz_solution_map_check(prob, (zero, zero), split)
        np.testing.assert_allclose(again["ratios"], out["ratios"], rtol=1e-10)
        full = [(prob.field(np.array(s).reshape(3, 3)), zero)
                for s in itertools.product((-1.0, 1.0), repeat=9)]
        assert lipschitz_solution_map_check(prob, (zero, zero), full)["max_ratio"] == pytest.approx(best, rel=1e-12)

    def test_semilinear_ratio_stable(self):
        prob = DiscreteProblem(semilinear_problem(), MeshQ(UNIT, 1.0, 12, 12))
        mesh = prob.mesh
        u, w = mesh.sample(lambda X, T: 0.3 * X * T), prob.parameter()
        rng = np.random.default_rng(5)
        du, dw = (GridField(mesh, rng.uniform(-1, 1, (13, 12))) for _ in range(2))
        maxima = []
        for r in (0.1, 0.05, 0.025):
            out = lipschitz_solution_map_check(prob, (u, w), [(u + du * r, w + dw * r), (u + du * r, w)])
            maxima.append(out["max_ratio"])
        assert max(maxima) <= 1.5 * min(maxima)
