"""Measure how the optimal control responds to perturbations of the parameter.

On the semilinear fixture, each of three directions is scaled by five radii.
The distance between the perturbed and the base solution should shrink
linearly with the radius, so the log-log slopes sit near one and the
distance-to-radius ratios settle down as the radius shrinks.

    python3 demos/stability_sweep.py
"""

from parastab.discrete import DiscreteProblem
from parastab.fixtures import semilinear_problem
from parastab.grid import MeshQ
from parastab.kkt import solve_ocp
from parastab.sosc import coercivity
from parastab.stability import default_plan, multiplier_stability_check, perturbation_sweep


def main():
    spec = semilinear_problem()
    prob = DiscreteProblem(spec, MeshQ(spec.domain, spec.T, 16, 16))
    w = prob.parameter()
    base = solve_ocp(prob, w)
    rep = coercivity(prob, base, w)
    print(f"base point: alpha = {rep.alpha:.4f}, rho = {rep.rho:.4f} ({rep.verdict})")

    plan = default_plan(prob.mesh)
    records, report = perturbation_sweep(prob, base, w, plan)
    print(f"\n{'direction':12s} {'radius':>8s} {'|du|/r':>9s} {'|dy|/r':>9s} {'|de|/r':>9s}")
    for r in records:
        print(f"{r.direction:12s} {r.radius:8.5f} {r.ratio('du_l2'):9.4f} "
              f"{r.ratio('dy_w112'):9.4f} {r.ratio('de_l2'):9.4f}")

    print("\nlog-log slopes of distance against radius")
    for name, per in report.slopes.items():
        print(f"  {name:12s} " + "  ".join(f"{k} {v:.3f}" for k, v in per.items()))
    print(f"\nK = {report.K_lips_hat:.4f}, k = {report.k_lips_hat:.4f}, "
          f"hypotheses {report.verdicts['hypotheses']}")
    mult = multiplier_stability_check(records)
    print(f"multiplier constant M1 = {mult['M1_hat']:.4f}, stable {mult['stable']}")


if __name__ == "__main__":
    main()
