import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parastab.expr import ParseError, constant, parse_expression, pretty


class TestParse:
    def test_linear_constraint_partials(self):
        g = parse_expression("u + w", {"u", "w"})
        d = g.derivs(0.3, 0.1, 0.0, np.linspace(-1, 1, 7), 0.5)
        np.testing.assert_array_equal(d.u, 1.0)
        np.testing.assert_array_equal(d.w, 1.0)
        np.testing.assert_array_equal(d.uu, 0.0)

    def test_semilinear_value_and_fy(self):
        f = parse_expression("y*(w^2 + t^4 + x^2)")
        d = f.derivs(1.0, 1.0, 2.0, 0.0, 1.0)
        assert float(d.val) == 6.0
        assert float(d.y) == 3.0

    def test_syntax_error_offset(self):
        with pytest.raises(ParseError) as info:
            parse_expression("y *")
        assert info.value.offset == 3

    @pytest.mark.parametrize("text", ["y + q", "sqrt(y)", "2 ^ y", "(y"])
    def test_rejects(self, text):
        with pytest.raises(ParseError):
            parse_expression(text)

    def test_variable_outside_allowed_set(self):
        with pytest.raises(ParseError):
            parse_expression("u*y", {"y", "x", "t"})

    def test_double_star_power(self):
        a = parse_expression("x**3 - 2*x^2")
        x = np.linspace(0, 1, 5)
        np.testing.assert_allclose(a(x, 0, 0, 0, 0), x**3 - 2 * x**2)

    def test_precedence(self):
        f = parse_expression("-2^2 + 3*4/2 - (1 - 1)")
        assert float(f(0, 0, 0, 0, 0)) == -4 + 6

    def test_constant_roundtrip(self):
        assert float(constant(0.1)(0, 0, 0, 0, 0)) == 0.1

    def test_arity_mask(self):
        f = parse_expression("sin(pi*x)*t + w")
        assert f.depends_on("w") and not f.depends_on("y")


_leaves = st.sampled_from(["x", "t", "y", "u", "w", "2", "0.5", "pi"])


def _combine(children):
    ops = st.sampled_from(["+", "-", "*"])
    return st.one_of(
        st.tuples(children, ops, children).map(lambda p: f"({p[0]} {p[1]} {p[2]})"),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda p: f"{p[0]}({p[1]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda p: f"({p[0]})^{p[1]}"),
        children.map(lambda c: f"-{c}"),
    )


expressions = st.recursive(_leaves, _combine, max_leaves=8)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(expressions)
    def test_pretty_is_fixed_point(self, text):
        once = pretty(parse_expression(text))
        assert pretty(parse_expression(once)) == once

    @settings(max_examples=60, deadline=None)
    @given(expressions)
    def test_pretty_preserves_value(self, text):
        rng = np.random.default_rng(0)
        args = rng.uniform(-1, 1, (5, 8))
        a = parse_expression(text)
        b = parse_expression(pretty(a))
        np.testing.assert_allclose(b(*args), a(*args), rtol=1e-12, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(expressions)
    def test_ad_matches_central_differences(self, text):
        fn = parse_expression(text)
        rng = np.random.default_rng(7)
        x, t, y, u, w = rng.uniform(-1, 1, (5, 100))
        d = fn.derivs(x, t, y, u, w)
        h = 1e-5
        shift = {"y": (h, 0, 0), "u": (0, h, 0), "w": (0, 0, h)}

        def ev(dy=0, du=0, dw=0):
            return fn(x, t, y + dy, u + du, w + dw)

        def fd_first(v):
            s = shift[v]
            return (ev(*s) - ev(*(-c for c in s))) / (2 * h)

        def fd_second(a, b):
            sa, sb = np.array(shift[a]), np.array(shift[b])
            return (ev(*(sa + sb)) - ev(*(sa - sb)) - ev(*(sb - sa)) + ev(*(-sa - sb))) / (4 * h * h)

        for v in "yuw":
            np.testing.assert_allclose(getattr(d, v), fd_first(v), rtol=1e-6, atol=1e-8)
        for a, b in (("y", "y"), ("y", "u"), ("u", "u"), ("y", "w")):
            # second differences lose digits to cancellation; compare at the FD noise floor
            scale = 1 + np.abs(ev())
            np.testing.assert_allclose(getattr(d, a + b), fd_second(a, b), rtol=1e-4,
                                       atol=1e-4 * np.max(scale))
