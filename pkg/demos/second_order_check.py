"""Second-order check on three fixtures with different verdicts.

The tracking problem with a control cost is strictly convex. The problem
without a control cost has no Legendre margin, so the check cannot decide.
The problem with a negative control cost fails outright. For a convex base
point, sampled feasible controls also show quadratic growth of the cost.

    python3 demos/second_order_check.py
"""

from parastab.discrete import DiscreteProblem
from parastab.fixtures import concave_problem, degenerate_problem, lq_problem
from parastab.grid import MeshQ
from parastab.kkt import solve_ocp
from parastab.sosc import coercivity
from parastab.stability import growth_check


def solved(spec, n=12):
    prob = DiscreteProblem(spec, MeshQ(spec.domain, spec.T, n, n))
    w = prob.parameter()
    return prob, w, solve_ocp(prob, w)


def main():
    for spec in (lq_problem(), degenerate_problem(), concave_problem()):
        prob, w, point = solved(spec)
        dense = coercivity(prob, point, w, method="dense")
        lanczos = coercivity(prob, point, w, method="iterative")
        print(f"{spec.name:12s} alpha {dense.alpha:+.6f} (matrix-free {lanczos.alpha:+.6f}) "
              f"rho {dense.rho:+.2f}  {dense.verdict}")

    prob, w, point = solved(lq_problem())
    alpha = coercivity(prob, point, w).alpha
    out = growth_check(prob, point, w, samples=200, radius=1e-2)
    print(f"\ngrowth on the convex fixture: kappa {out['kappa']:.4f} "
          f"(alpha {alpha:.4f}), violations {out['violations']} of {out['used']}")


if __name__ == "__main__":
    main()
