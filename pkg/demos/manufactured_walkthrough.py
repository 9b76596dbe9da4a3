"""Solve a manufactured control problem and compare with its known KKT point.

The case has an exact state, adjoint, control and multiplier. The control
bound u <= 1 is active on the band 1/4 < x < 3/4, so the solver has to find
that set on its own.

    python3 demos/manufactured_walkthrough.py
"""

import numpy as np

from parastab.discrete import DiscreteProblem
from parastab.grid import MeshQ, norm
from parastab.kkt import kkt_residuals, solve_ocp
from parastab.model import SpatialDomain
from parastab.oracle import build_manufactured


def main():
    mesh = MeshQ(SpatialDomain.interval(), 1.0, 16, 16)
    case = build_manufactured("lq_active_band", mesh)
    print("exact state   :", case.exact["y"])
    print("exact adjoint :", case.exact["phi"])
    print("switching q   :", case.exact["q"])

    # the exact fields satisfy stationarity and complementarity to roundoff;
    # the state and adjoint equations only up to the discretisation error
    res = kkt_residuals(case.spec, case.point(), case.w)
    print("\nresiduals of the sampled exact point")
    for name, val in res._asdict().items():
        print(f"  {name:16s} {val:.3e}")

    prob = DiscreteProblem(case.spec, mesh)
    point = solve_ocp(prob, case.w)
    print(f"\nsemismooth Newton: {point.iterations} iterations, converged {point.converged}")
    for name, val in point.residuals._asdict().items():
        print(f"  {name:16s} {val:.3e}")

    g = prob.g(point.y.interior, point.u.interior, case.w.interior)
    found = g >= -1e-8
    print(f"\nactive nodes found {found.sum()} of {found.size}, "
          f"identical to the exact set: {np.array_equal(found, case.active)}")
    print(f"control distance to the exact control (L2): {norm(point.u - case.u, 'L2Q'):.3e}")


if __name__ == "__main__":
    main()
