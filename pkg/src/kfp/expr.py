"""A small closed-form expression language for sources, data and test solutions.

Grammar: numbers, the variables ``x1 .. xN`` and ``t``, the constant ``pi``,
the operators ``+ - * / ^`` (``**`` is accepted too), parentheses, and the
functions

    exp sin cos sqrt abs log
    bump(z, c, w)            exp(1 - 1/(1 - r^2)) for r = (z - c)/w inside |r| < 1, else 0
    window(z, lo, hi, ramp)  1 on [lo, hi], quintic smoothstep to 0 over ``ramp`` outside

Expressions are parsed with :mod:`ast` under a node whitelist, turned into
sympy (so they can be differentiated exactly) and compiled with numpy.
"""

import ast
import re
import warnings

import numpy as np
import sympy as sp

from .errors import ExpressionError

_VAR = re.compile(r"^x([1-9][0-9]*)$")
t_sym = sp.Symbol("t", real=True)


def _smooth(u):
    return sp.Piecewise((0, u <= 0), (1, u >= 1), (u ** 3 * (10 - 15 * u + 6 * u ** 2), True))


def _bump(z, c, w):
    r2 = ((z - c) / w) ** 2
    return sp.Piecewise((sp.exp(1 - 1 / (1 - r2)), r2 < 1), (0, True))


def _window(z, lo, hi, ramp):
    return _smooth((z - lo + ramp) / ramp) * _smooth((hi + ramp - z) / ramp)


_FUNCS = {
    "exp": (1, sp.exp), "sin": (1, sp.sin), "cos": (1, sp.cos), "sqrt": (1, sp.sqrt),
    "abs": (1, sp.Abs), "log": (1, sp.log), "bump": (3, _bump), "window": (4, _window),
}
_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
           ast.Mult: lambda a, b: a * b, ast.Div: lambda a, b: a / b,
           ast.Pow: lambda a, b: a ** b}


def x_symbols(N):
    return sp.symbols(" ".join(f"x{i + 1}" for i in range(N)), real=True, seq=True)


def parse(text, N):
    """Parse ``text`` into a sympy expression in x1..xN and t."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    xs = x_symbols(N)
    try:
        # '^' is power here; swapping before parsing also gives it the right precedence
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from exc

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "t":
                return t_sym
            if node.id == "pi":
                return sp.pi
            m = _VAR.match(node.id)
            if m and int(m.group(1)) <= N:
                return xs[int(m.group(1)) - 1]
            raise ExpressionError(f"unknown variable {node.id!r} (N = {N})")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](build(node.left), build(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = build(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            if node.func.id not in _FUNCS:
                raise ExpressionError(f"unknown function {node.func.id!r}")
            arity, fn = _FUNCS[node.func.id]
            if len(node.args) != arity:
                raise ExpressionError(f"{node.func.id} takes {arity} argument(s), got {len(node.args)}")
            return fn(*[build(a) for a in node.args])
        raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")

    return build(tree)


class Expression:
    """A parsed expression f(x, t) with numpy evaluation and exact derivatives."""

    def __init__(self, source, N):
        self.N = int(N)
        self.xs = x_symbols(self.N)
        self.sym = parse(source, self.N) if isinstance(source, str) else sp.sympify(source)
        self.text = source if isinstance(source, str) else str(source)
        self._fn = None

    def __repr__(self):
        return f"Expression({self.text!r}, N={self.N})"

    @property
    def has_time(self):
        return t_sym in self.sym.free_symbols

    def __call__(self, x, t=0.0):
        if self._fn is None:
            self._fn = sp.lambdify((*self.xs, t_sym), self.sym, modules="numpy")
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], t.shape)
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = self._fn(*[x[..., i] for i in range(self.N)], t)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def diff(self, *variables):
        """Derivative with respect to variables given as axis indices (int) or 't'."""
        syms = [t_sym if v == "t" else self.xs[int(v)] for v in variables]
        return Expression(sp.diff(self.sym, *syms), self.N)


class ManufacturedSolution:
    """A chosen u with exact derivatives, used to build sources with known solutions.

    ``lbar(x, t)`` is sum a_ij(t) d_ij u + <B x, grad u> - d_t u - lam u for the
    coefficient path and drift matrix supplied.
    """

    def __init__(self, u, group, path, lam=0.0):
        self.group = group
        self.path = path
        self.lam = float(lam)
        self.u = u if isinstance(u, Expression) else Expression(u, group.N)
        N, q = group.N, group.q
        self.grad = [self.u.diff(i) for i in range(N)]
        self.hess = {(i, j): self.u.diff(i, j) for i in range(q) for j in range(i, q)}
        self.dt = self.u.diff("t")

    def d2(self, i, j):
        return self.hess[(min(i, j), max(i, j))]

    def drift(self, x, t):
        x = np.asarray(x, dtype=float)
        Bx = x @ self.group.B.T
        out = -self.dt(x, t)
        for i in range(self.group.N):
            if np.any(self.group.B[i]):
                out = out + Bx[..., i] * self.grad[i](x, t)
        return out

    def lbar(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], t.shape)
        tb = np.broadcast_to(t, shape)
        A = self.path(tb.ravel()).reshape(shape + (self.group.q, self.group.q))
        out = self.drift(x, t) - self.lam * self.u(x, t)
        for (i, j), e in self.hess.items():
            coef = A[..., i, j] if i == j else A[..., i, j] + A[..., j, i]
            out = out + coef * e(x, t)
        return out
