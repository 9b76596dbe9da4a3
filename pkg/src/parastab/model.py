"""Problem description: domain, elliptic coefficients, (L, f, g) and audits.

The audits are sampling-based. They report sampled bounds for the constants
in the standing hypotheses and treat them as certificates at the probed
resolution only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import ScalarFn2, parse_expression

SYMMETRY_TOL = 1e-14


@dataclass(frozen=True)
class SpatialDomain:
    """An interval ``[a, b]`` or a rectangle ``[a1, b1] x [a2, b2]``."""

    kind: str
    bounds: tuple

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        bounds = tuple(tuple(float(v) for v in b) for b in self.bounds)
        if len(bounds) != self.dim:
            raise ValueError(f"{self.kind} needs {self.dim} axis bound pair(s)")
        for lo, hi in bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"axis bounds must be strictly ordered, got ({lo}, {hi})")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def interval(cls, a: float = 0.0, b: float = 1.0) -> "SpatialDomain":
        return cls("interval", ((a, b),))

    @classmethod
    def rectangle(cls, xb=(0.0, 1.0), yb=(0.0, 1.0)) -> "SpatialDomain":
        return cls("rectangle", (tuple(xb), tuple(yb)))

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    def sample(self, n: int, rng: np.random.Generator):
        """``n`` uniform points plus the vertices, as an ``x`` argument."""
        pts = [rng.uniform(lo, hi, n) for lo, hi in self.bounds]
        if self.dim == 1:
            (lo, hi), = self.bounds
            return np.concatenate([[lo, hi], pts[0]])
        (a1, b1), (a2, b2) = self.bounds
        x1 = np.concatenate([[a1, a1, b1, b1], pts[0]])
        x2 = np.concatenate([[a2, b2, a2, b2], pts[1]])
        return (x1, x2)

    def boundary_points(self, n: int = 11):
        if self.dim == 1:
            return np.array([lo for lo, _ in self.bounds] + [hi for _, hi in self.bounds])
        (a1, b1), (a2, b2) = self.bounds
        s1, s2 = np.linspace(a1, b1, n), np.linspace(a2, b2, n)
        x1 = np.concatenate([s1, s1, np.full(n, a1), np.full(n, b1)])
        x2 = np.concatenate([np.full(n, a2), np.full(n, b2), s2, s2])
        return (x1, x2)


def _space_vars(dim: int) -> set:
    return {"x"} if dim == 1 else {"x", "x2"}


@dataclass(frozen=True)
class EllipticCoefficients:
    """Table ``a[i][j]`` of coefficient functions of x only."""

    a: tuple

    @classmethod
    def from_table(cls, table, dim: int) -> "EllipticCoefficients":
        if isinstance(table, (str, int, float, ScalarFn2)):
            # isotropic: a_ij = a * delta_ij
            table = [[table if i == j else "0" for j in range(dim)] for i in range(dim)]
        if len(table) != dim or any(len(row) != dim for row in table):
            raise ValueError(f"coefficient table must be {dim}x{dim}")
        allowed = _space_vars(dim)
        rows = []
        for row in table:
            r = []
            for entry in row:
                if isinstance(entry, ScalarFn2):
                    r.append(entry)
                else:
                    r.append(parse_expression(str(entry), allowed))
            rows.append(tuple(r))
        return cls(tuple(rows))

    @property
    def dim(self) -> int:
        return len(self.a)

    def is_symmetric(self) -> bool:
        d = self.dim
        probe = _probe_points(d)
        for i in range(d):
            for j in range(i + 1, d):
                if self.a[i][j].text == self.a[j][i].text:
                    continue
                diff = self.a[i][j](probe, 0.0) - self.a[j][i](probe, 0.0)
                if np.max(np.abs(diff)) > SYMMETRY_TOL:
                    return False
        return True

    def require_symmetric(self):
        if not self.is_symmetric():
            raise ValueError("non-symmetric coefficient table (a_ij != a_ji)")

    def evaluate(self, x, i: int, j: int):
        return self.a[i][j](x, 0.0)


def _probe_points(dim: int):
    rng = np.random.default_rng(12345)
    pts = rng.uniform(-3.0, 3.0, (dim, 64))
    return pts[0] if dim == 1 else (pts[0], pts[1])


@dataclass(frozen=True)
class ProblemSpec:
    """The parametric problem: minimise the integral of L subject to

    ``y_t + A y + f(x, t, y, w) = u + w``, ``y = 0`` on the boundary,
    ``y(0) = y0`` and ``g(x, t, y, u, w) <= 0`` pointwise.

    ``w_ref`` is the nominal parameter: a float, a function of (x, t), or a
    :class:`~parastab.grid.GridField` on a fixed mesh.
    """

    domain: SpatialDomain
    T: float
    coeffs: EllipticCoefficients
    y0: ScalarFn2
    L: ScalarFn2
    f: ScalarFn2
    g: ScalarFn2
    w_ref: object = 0.0
    name: str = "problem"

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.coeffs.dim != self.domain.dim:
            raise ValueError("coefficient table dimension does not match the domain")
        space = _space_vars(self.domain.dim)
        checks = {
            "y0": (self.y0, space),
            "f": (self.f, space | {"t", "y", "w"}),
            "g": (self.g, space | {"t", "y", "u", "w"}),
            "L": (self.L, space | {"t", "y", "u", "w"}),
        }
        for label, (fn, allowed) in checks.items():
            extra = fn.variables - allowed
            if extra:
                raise ValueError(f"{label} depends on disallowed variables {sorted(extra)}")
        xb = self.domain.boundary_points()
        if np.max(np.abs(self.y0(xb, 0.0)), initial=0.0) > 1e-10:
            raise ValueError("initial state y0 must vanish on the boundary")

    @classmethod
    def from_strings(cls, domain: SpatialDomain, T: float, a, y0: str, L: str, f: str,
                     g: str, w_ref=0.0, name: str = "problem") -> "ProblemSpec":
        space = _space_vars(domain.dim)
        return cls(
            domain=domain,
            T=float(T),
            coeffs=EllipticCoefficients.from_table(a, domain.dim),
            y0=parse_expression(y0, space),
            L=parse_expression(L, space | {"t", "y", "u", "w"}),
            f=parse_expression(f, space | {"t", "y", "w"}),
            g=parse_expression(g, space | {"t", "y", "u", "w"}),
            w_ref=_coerce_parameter(w_ref, space),
            name=name,
        )


def _coerce_parameter(w, space):
    if isinstance(w, str):
        return parse_expression(w, space | {"t"})
    if isinstance(w, (int, float)):
        return float(w)
    return w


# --- audits ----------------------------------------------------------------


@dataclass
class AuditReport:
    h1_alpha: float
    h2_cf: float
    lipschitz_samples: dict
    h4_gamma0: float
    passes: dict
    seed: int
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "h1_alpha": self.h1_alpha,
            "h2_cf": self.h2_cf,
            "lipschitz_samples": dict(self.lipschitz_samples),
            "h4_gamma0": self.h4_gamma0,
            "passes": dict(self.passes),
            "seed": self.seed,
            "notes": list(self.notes),
        }


def audit_h1(coeffs: EllipticCoefficients, domain: SpatialDomain, probes: int = 200,
             seed: int = 0) -> float:
    """Sampled ellipticity constant: min over x of the smallest eigenvalue of a(x).

    The domain vertices are always included among the probes.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    coeffs.require_symmetric()
    x = domain.sample(probes, np.random.default_rng(seed))
    d = coeffs.dim
    n = np.shape(x[0] if d == 2 else x)[0]
    mats = np.empty((n, d, d))
    for i in range(d):
        for j in range(d):
            mats[:, i, j] = coeffs.evaluate(x, i, j)
    # min over unit xi of xi^T a xi is the smallest eigenvalue for symmetric a
    return float(np.min(np.linalg.eigvalsh(mats)))


def _box_samples(spec: ProblemSpec, M: float, n: int, rng):
    x = spec.domain.sample(n, rng)
    size = (x[0] if isinstance(x, tuple) else x).shape[0]
    t = rng.uniform(0.0, spec.T, size)
    y, u, w = (rng.uniform(-M, M, size) for _ in range(3))
    return x, t, y, u, w


def _lipschitz_quotients(fn: ScalarFn2, spec, M, n, rng, use_u: bool) -> dict:
    """Max difference quotients of fn and its partials over pairs in the M-box."""
    x, t, y1, u1, w1 = _box_samples(spec, M, n, rng)
    size = y1.shape[0]
    y2, u2, w2 = (rng.uniform(-M, M, size) for _ in range(3))
    if not use_u:
        u1 = u2 = np.zeros(size)
    d1 = fn.derivs(x, t, y1, u1, w1)
    d2 = fn.derivs(x, t, y2, u2, w2)
    dist = np.abs(y1 - y2) + np.abs(w1 - w2) + (np.abs(u1 - u2) if use_u else 0.0)
    keep = dist > 0
    out = {}
    names = ("val", "y", "w", "yy", "yw", "ww") + (("u", "yu", "uu", "uw") if use_u else ())
    for name in names:
        a, b = getattr(d1, name), getattr(d2, name)
        out[name] = float(np.max(np.abs(a - b)[keep] / dist[keep], initial=0.0))
    return out


def audit_h2_h3(spec: ProblemSpec, M: float = 1.0, probes: int = 2000, seed: int = 0) -> dict:
    """Sampled growth/Lipschitz constants for f (H2) and for L, g (H3).

    Returns ``C_f`` (min sampled f_y), ``k_fM``, ``k_LM``, ``k_gM`` (max sampled
    difference quotient of the function value), per-partial quotients, and a
    ``diverging`` list naming quotients that more than double when the probe
    count is quadrupled.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    rng = np.random.default_rng(seed)
    x, t, y, u, w = _box_samples(spec, M, probes, rng)
    c_f = float(np.min(spec.f.derivs(x, t, y, 0.0, w).y))
    f_at_zero = float(np.max(np.abs(spec.f(x, t, 0.0, 0.0, w))))
    coarse, fine = {}, {}
    for label, fn, use_u in (("f", spec.f, False), ("L", spec.L, True), ("g", spec.g, True)):
        coarse[label] = _lipschitz_quotients(fn, spec, M, probes, np.random.default_rng(seed + 1), use_u)
        fine[label] = _lipschitz_quotients(fn, spec, M, 4 * probes, np.random.default_rng(seed + 2), use_u)
    diverging = []
    for label in coarse:
        for part, q in coarse[label].items():
            qf = fine[label][part]
            if qf > 2.0 * q + 1e-12 and qf > 1e-12:
                diverging.append(f"{label}.{part}")
    lipschitz = {f"{label}.{part}": q for label in fine for part, q in fine[label].items()}
    return {
        "C_f": c_f,
        "k_fM": fine["f"]["val"],
        "k_LM": fine["L"]["val"],
        "k_gM": fine["g"]["val"],
        "f_at_zero": f_at_zero,
        "lipschitz": lipschitz,
        "diverging": diverging,
        "M": float(M),
    }


def audit_h4(spec: ProblemSpec, y, u, w) -> float:
    """gamma_0 = min over the control lattice of |g_u(x, t, y, u, w)|."""
    mesh = y.mesh
    for fld in (u, w):
        mesh.require_same(fld.mesh)
    X, Tt = mesh.lattice()
    gu = spec.g.derivs(X, Tt, y.values[1:], u.values[1:], w.values[1:]).u
    return float(np.min(np.abs(gu)))


def audit(spec: ProblemSpec, y, u, w, M: float = 1.0, probes: int = 500,
          seed: int = 0) -> AuditReport:
    alpha = audit_h1(spec.coeffs, spec.domain, probes, seed)
    h23 = audit_h2_h3(spec, M, probes, seed)
    gamma0 = audit_h4(spec, y, u, w)
    passes = {
        "H1": alpha > 0,
        "H2": bool(np.isfinite(h23["C_f"]) and h23["f_at_zero"] <= 1e-12
                   and not any(k.startswith("f.") for k in h23["diverging"])),
        "H3": not any(k[0] in "Lg" for k in h23["diverging"]),
        "H4": gamma0 > 0,
    }
    notes = []
    if h23["f_at_zero"] > 1e-12:
        notes.append("f(x, t, 0, w) != 0 at some probe")
    lips = {"k_fM": h23["k_fM"], "k_LM": h23["k_LM"], "k_gM": h23["k_gM"]}
    lips.update(h23["lipschitz"])
    return AuditReport(alpha, h23["C_f"], lips, gamma0, passes, seed, notes)
