"""Scalar expressions over (x, t, y, u, w) with second-order forward-mode AD.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("+" | "-") unary | power ;
    power   = atom [ ("^" | "**") ["+" | "-"] integer ] ;
    atom    = number | name | func "(" expr ")" | "(" expr ")" ;
    func    = "sin" | "cos" | "exp" ;
    name    = "x" | "x1" | "x2" | "t" | "y" | "u" | "w" | "pi" ;

``x`` and ``x1`` name the same (first) spatial coordinate. Exponents are
integer literals only, which keeps every expression C-infinity.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SPACE_VARS = ("x", "x1", "x2")
ALL_VARS = frozenset({"x", "x1", "x2", "t", "y", "u", "w"})
STATE_VARS = ("y", "u", "w")  # differentiated variables, in Jet order
FUNCTIONS = ("sin", "cos", "exp")


class ParseError(ValueError):
    """Malformed expression; ``offset`` is the 0-based character position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


# --- syntax tree -----------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            stripped = len(text) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[stripped]!r}", stripped)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: frozenset[str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            what = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {what}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            sign = 1
            while self.peek()[1] in ("+", "-"):
                if self.take()[1] == "-":
                    sign = -sign
            kind, val, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise ParseError("exponent must be an integer literal", pos)
            return Pow(base, sign * int(val))
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val == "pi":
                return Num(math.pi)
            if val not in ALL_VARS:
                raise ParseError(f"unknown variable {val!r}", pos)
            if val not in self.allowed and not (val == "x1" and "x" in self.allowed):
                raise ParseError(f"variable {val!r} not allowed here", pos)
            return Var("x" if val == "x1" else val)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"expected operand, found {what}", pos)


# --- pretty printing -------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v: float) -> str:
    if v == math.pi:
        return "pi"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _pretty(node, parent: int = 0) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_pretty(node.arg)})"
    if isinstance(node, Neg):
        s = "-" + _pretty(node.arg, 3)
        return f"({s})" if parent >= 2 else s
    if isinstance(node, Pow):
        s = f"{_pretty(node.base, 4)}^{node.exponent}"
        return f"({s})" if parent >= 4 else s
    prec = _PREC[node.op]
    # left-associative: the right operand of -, / needs a strictly higher level
    s = f"{_pretty(node.left, prec)} {node.op} {_pretty(node.right, prec + 1)}"
    return f"({s})" if parent > prec else s


# --- second-order jets -----------------------------------------------------


class Jet:
    """Value, gradient and Hessian with respect to (y, u, w), vectorized."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v = v
        self.g = g
        self.h = h

    @classmethod
    def const(cls, v, shape):
        v = np.broadcast_to(np.asarray(v, dtype=float), shape)
        return cls(v, np.zeros((3,) + shape), np.zeros((3, 3) + shape))

    @classmethod
    def seed(cls, v, k, shape):
        jet = cls.const(v, shape)
        jet.g[k] = 1.0
        return jet

    def _chain(self, f0, f1, f2):
        g = f1 * self.g
        h = f1 * self.h + f2 * (self.g[:, None] * self.g[None, :])
        return Jet(f0, g, h)

    def __add__(self, o):
        return Jet(self.v + o.v, self.g + o.g, self.h + o.h)

    def __sub__(self, o):
        return Jet(self.v - o.v, self.g - o.g, self.h - o.h)

    def __neg__(self):
        return Jet(-self.v, -self.g, -self.h)

    def __mul__(self, o):
        g = self.v * o.g + o.v * self.g
        h = (
            self.v * o.h
            + o.v * self.h
            + self.g[:, None] * o.g[None, :]
            + o.g[:, None] * self.g[None, :]
        )
        return Jet(self.v * o.v, g, h)

    def reciprocal(self):
        inv = 1.0 / self.v
        return self._chain(inv, -(inv**2), 2.0 * inv**3)

    def __truediv__(self, o):
        return self * o.reciprocal()

    def ipow(self, n: int):
        if n == 0:
            return Jet.const(1.0, self.v.shape)
        if n < 0:
            return self.reciprocal().ipow(-n)
        v = self.v
        f1 = n * v ** (n - 1)
        f2 = n * (n - 1) * v ** (n - 2) if n >= 2 else np.zeros_like(v)
        return self._chain(v**n, f1, f2)

    def sin(self):
        s, c = np.sin(self.v), np.cos(self.v)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = np.sin(self.v), np.cos(self.v)
        return self._chain(c, -s, -c)

    def exp(self):
        e = np.exp(self.v)
        return self._chain(e, e, e)


class Derivs(NamedTuple):
    """Value and partials of a scalar function at a batch of points."""

    val: np.ndarray
    y: np.ndarray
    u: np.ndarray
    w: np.ndarray
    yy: np.ndarray
    yu: np.ndarray
    uu: np.ndarray
    yw: np.ndarray
    uw: np.ndarray
    ww: np.ndarray


def _eval_plain(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval_plain(node.arg, env)
    if isinstance(node, Pow):
        base = _eval_plain(node.base, env)
        if node.exponent < 0:
            return 1.0 / np.power(base, -node.exponent)
        return np.power(base, node.exponent)
    if isinstance(node, Call):
        return getattr(np, node.func)(_eval_plain(node.arg, env))
    a, b = _eval_plain(node.left, env), _eval_plain(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    return a / b


def _eval_jet(node, env, shape):
    if isinstance(node, Num):
        return Jet.const(node.value, shape)
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval_jet(node.arg, env, shape)
    if isinstance(node, Pow):
        return _eval_jet(node.base, env, shape).ipow(node.exponent)
    if isinstance(node, Call):
        return getattr(_eval_jet(node.arg, env, shape), node.func)()
    a, b = _eval_jet(node.left, env, shape), _eval_jet(node.right, env, shape)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    return a / b


def _variables(node, acc: set):
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, (Neg, Call)):
        _variables(node.arg, acc)
    elif isinstance(node, Pow):
        _variables(node.base, acc)
    elif isinstance(node, BinOp):
        _variables(node.left, acc)
        _variables(node.right, acc)
    return acc


@dataclass(frozen=True)
class ScalarFn2:
    """A parsed, twice-differentiable scalar function of (x, t, y, u, w).

    ``x`` may be a single array (1D) or a tuple ``(x1, x2)`` (2D). All other
    arguments broadcast against it. ``variables`` is the arity mask.
    """

    tree: object
    text: str
    variables: frozenset

    def __str__(self) -> str:
        return self.text

    def depends_on(self, name: str) -> bool:
        return name in self.variables

    def _env(self, x, t, y, u, w):
        if isinstance(x, tuple):
            x1, x2 = x
        else:
            x1, x2 = x, 0.0
        args = [x1, x2, t, y, u, w]
        shape = np.broadcast_shapes(*(np.shape(a) for a in args))
        env = {"x": x1, "x2": x2, "t": t}
        return env, shape, (y, u, w)

    def __call__(self, x, t, y=0.0, u=0.0, w=0.0):
        env, shape, (yv, uv, wv) = self._env(x, t, y, u, w)
        env.update(y=yv, u=uv, w=wv)
        out = _eval_plain(self.tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def derivs(self, x, t, y=0.0, u=0.0, w=0.0) -> Derivs:
        env, shape, states = self._env(x, t, y, u, w)
        jenv = {k: Jet.const(v, shape) for k, v in env.items()}
        for k, (name, val) in enumerate(zip(STATE_VARS, states)):
            jenv[name] = Jet.seed(val, k, shape)
        j = _eval_jet(self.tree, jenv, shape)
        c = lambda a: np.array(np.broadcast_to(a, shape), dtype=float)  # noqa: E731
        return Derivs(
            c(j.v), c(j.g[0]), c(j.g[1]), c(j.g[2]),
            c(j.h[0, 0]), c(j.h[0, 1]), c(j.h[1, 1]),
            c(j.h[0, 2]), c(j.h[1, 2]), c(j.h[2, 2]),
        )


def parse_expression(text: str, allowed_vars=ALL_VARS) -> ScalarFn2:
    """Parse ``text`` into a :class:`ScalarFn2` restricted to ``allowed_vars``.

    Raises :class:`ParseError` with the character offset on malformed input,
    unknown names, or names outside ``allowed_vars``.
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", 0)
    allowed = frozenset(allowed_vars)
    unknown = allowed - ALL_VARS
    if unknown:
        raise ValueError(f"unknown variables in allowed set: {sorted(unknown)}")
    tree = _Parser(text, allowed).parse()
    return ScalarFn2(tree, _pretty(tree), frozenset(_variables(tree, set())))


def pretty(fn: ScalarFn2) -> str:
    return fn.text


def constant(value: float) -> ScalarFn2:
    return parse_expression(repr(float(value)))
