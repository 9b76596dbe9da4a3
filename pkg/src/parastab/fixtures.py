"""Built-in problems used by the tests, the demos and the CLI.

All are posed on the unit interval with A = -d^2/dx^2 unless stated.
"""

from __future__ import annotations

import dataclasses

from .model import ProblemSpec, SpatialDomain

SEMILINEAR_F = "y*(w^2 + t^4 + x^2)"
SEMILINEAR_G = "u + w"


def zero_problem(T: float = 1.0) -> ProblemSpec:
    """Tracking of y_d = 0 with u_d = 0, y0 = 0, w = 0: the optimum is zero."""
    return ProblemSpec.from_strings(
        SpatialDomain.interval(), T, "1", y0="0", L="0.5*y^2 + 0.5*u^2", f="0",
        g="u - 1", w_ref=0.0, name="zero",
    )


def lq_problem(psi: str | None = "1", yd: str = "20*sin(pi*x)*t", y0: str = "0",
               T: float = 1.0, control_cost: float = 1.0) -> ProblemSpec:
    """Linear-quadratic tracking with the upper bound ``u <= psi``.

    ``psi=None`` places the bound at 1e6 so that it is never active. The
    parameter enters only as the additive source of the state equation.
    """
    bound = "1000000" if psi is None else psi
    if control_cost == 0:
        L = f"0.5*(y - ({yd}))^2"
    else:
        L = f"0.5*(y - ({yd}))^2 + {control_cost!r}/2*u^2"
    return ProblemSpec.from_strings(
        SpatialDomain.interval(), T, "1", y0=y0, L=L, f="0", g=f"u - ({bound})", w_ref=0.0,
        name="lq" if psi is not None else "lq_inactive",
    )


def degenerate_problem(T: float = 1.0) -> ProblemSpec:
    """Tracking without control cost: the Legendre constant is zero."""
    spec = lq_problem(psi=None, yd="sin(pi*x)", T=T, control_cost=0.0)
    return dataclasses.replace(spec, name="degenerate")


def concave_problem(T: float = 1.0) -> ProblemSpec:
    """Negative control: L_uu = -1 everywhere."""
    return ProblemSpec.from_strings(
        SpatialDomain.interval(), T, "1", y0="0", L="0.5*(y - sin(pi*x))^2 - 0.5*u^2", f="0",
        g="u - 1000000", w_ref=0.0, name="concave",
    )


def semilinear_problem(T: float = 1.0, w_ref: float = -0.5, yd: str = "6*sin(pi*x)",
                       y0: str = "sin(pi*x)") -> ProblemSpec:
    """Semilinear fixture with f = y (w^2 + t^4 + x^2) and g = u + w.

    With ``w_ref = -0.5`` the constraint reads ``u <= 0.5`` and is active on
    part of Q.
    """
    return ProblemSpec.from_strings(
        SpatialDomain.interval(), T, "1", y0=y0, L=f"0.5*(y - ({yd}))^2 + 0.5*u^2",
        f=SEMILINEAR_F, g=SEMILINEAR_G, w_ref=w_ref, name="semilinear",
    )


def cubic_problem(T: float = 1.0, w_ref: float = -0.5, yd: str = "3*sin(pi*x)") -> ProblemSpec:
    """Variant with f = (y + y^3)(w^2 + t^2 + x^2), so f_yy does not vanish."""
    return ProblemSpec.from_strings(
        SpatialDomain.interval(), T, "1", y0="sin(pi*x)", L=f"0.5*(y - ({yd}))^2 + 0.5*u^2",
        f="(y + y^3)*(w^2 + t^2 + x^2)", g=SEMILINEAR_G, w_ref=w_ref, name="cubic",
    )
