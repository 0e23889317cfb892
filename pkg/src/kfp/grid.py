"""Sampled functions on uniform box grids and compactly supported sources.

A :class:`GridFunction` lives on the nodes ``lower + k * spacing`` of an
axis-aligned box.  With ``has_time`` the last axis is t and the first N are x;
otherwise all axes are spatial (initial data on R^N).
"""

import csv
from math import comb
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import GridIncompatible, IOFailure, ShapeMismatch


# ------------------------------------------------------------------ profiles
def smoothstep(u):
    """Quintic smoothstep: 0 for u <= 0, 1 for u >= 1, C^2 in between."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)


def smoothstep_derivative(u):
    inside = (u > 0) & (u < 1)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 30.0 * u * u * (1.0 - u) ** 2, 0.0)


def bump(z, c=0.0, w=1.0):
    """C-infinity bump exp(1 - 1/(1 - r^2)), r = (z - c) / w, equal to 1 at the center."""
    r2 = ((np.asarray(z, dtype=float) - c) / w) ** 2
    inside = r2 < 1.0
    out = np.zeros(np.shape(r2))
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def window(z, lo, hi, ramp):
    """1 on [lo, hi], smoothstep down to 0 over ``ramp`` outside."""
    z = np.asarray(z, dtype=float)
    return smoothstep((z - lo + ramp) / ramp) * smoothstep((hi + ramp - z) / ramp)


# ------------------------------------------------------------------ sources
@dataclass(eq=False)
class Source:
    """A function f(x, t) (or f(x) for data without time) vanishing outside a box.

    ``func`` takes x of shape (..., N) and, when ``has_time``, t broadcastable
    to x.shape[:-1].  ``kinks`` lists values c such that f has a Hoelder kink
    on the hyperplane x_1 = c; quadrature rules split there.
    """

    func: object
    lower: np.ndarray
    upper: np.ndarray
    has_time: bool = True
    kinks: tuple = ()

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or np.any(self.upper < self.lower):
            raise ShapeMismatch("source box needs lower <= upper of equal length")

    @property
    def N(self):
        return self.lower.size - (1 if self.has_time else 0)

    def __call__(self, x, t=None):
        x = np.asarray(x, dtype=float)
        N = self.N
        shape = x.shape[:-1]
        inside = np.ones(shape, dtype=bool)
        for k in range(N):
            inside &= (x[..., k] >= self.lower[k]) & (x[..., k] <= self.upper[k])
        if self.has_time:
            t = np.broadcast_to(np.asarray(t, dtype=float), shape)
            inside &= (t >= self.lower[-1]) & (t <= self.upper[-1])
        out = np.zeros(shape)
        if inside.all():
            out[...] = self.func(x, t) if self.has_time else self.func(x)
        elif inside.any():
            xi = x[inside]
            out[inside] = self.func(xi, t[inside]) if self.has_time else self.func(xi)
        return out

    def scaled(self, a):
        func = self.func
        return Source(lambda *args: a * np.asarray(func(*args)), self.lower, self.upper,
                      self.has_time, self.kinks)


# ------------------------------------------------------------ grid function
_GHOST = 8


def _extrapolate(v, axis, width):
    """Append ``width`` layers on both ends of ``axis`` by polynomial extrapolation
    (cubic, or of degree n - 1 on axes with n < 4 samples)."""
    v = np.moveaxis(v, axis, 0)
    deg = min(3, v.shape[0] - 1)
    # finite-difference weights making the (deg + 1)-th difference vanish
    c = np.array([(-1) ** k * comb(deg + 1, k) for k in range(1, deg + 2)], dtype=float)
    lo, hi = list(v[:deg + 1]), list(v[::-1][:deg + 1])
    left, right = [], []
    for _ in range(width):
        nxt = sum(-ck * a for ck, a in zip(c, lo))
        lo = [nxt] + lo[:deg]
        left.insert(0, nxt)
        nxt = sum(-ck * a for ck, a in zip(c, hi))
        hi = [nxt] + hi[:deg]
        right.append(nxt)
    out = np.concatenate([np.stack(left), v, np.stack(right)], axis=0)
    return np.moveaxis(out, 0, axis)


class GridFunction:
    """Values on a uniform grid over the box [lower, upper]."""

    def __init__(self, lower, upper, values, has_time=True):
        self.lower = np.asarray(lower, dtype=float).ravel()
        self.upper = np.asarray(upper, dtype=float).ravel()
        self.values = np.asarray(values, dtype=float)
        self.has_time = bool(has_time)
        if self.values.ndim != self.lower.size or self.upper.size != self.lower.size:
            raise ShapeMismatch(f"box has {self.lower.size} axes, values have {self.values.ndim}")
        if np.any(np.array(self.values.shape) < 2):
            raise ShapeMismatch("every axis needs at least two samples")
        if not np.all(self.upper > self.lower):
            raise ShapeMismatch("box needs upper > lower on every axis")

    @classmethod
    def from_function(cls, func, lower, upper, shape, has_time=True):
        """Sample ``func(x, t)`` (or ``func(x)``) on the grid."""
        g = cls(lower, upper, np.zeros(tuple(int(n) for n in shape)), has_time)
        x, t = g.points()
        g.values = np.asarray(func(x, t) if has_time else func(x), dtype=float) * np.ones(g.shape)
        return g

    def like(self, values):
        return GridFunction(self.lower, self.upper, values, self.has_time)

    # ---------------------------------------------------------- geometry
    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def N(self):
        return self.ndim - (1 if self.has_time else 0)

    @property
    def spacing(self):
        return (self.upper - self.lower) / (np.array(self.shape) - 1)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.shape)]

    def points(self):
        """(x, t) arrays of shapes shape + (N,) and shape (t is None without time)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        if self.has_time:
            return np.stack(mesh[:-1], axis=-1), mesh[-1]
        return np.stack(mesh, axis=-1), None

    def compatible(self, other, rtol=1e-12):
        return (self.shape == other.shape and self.has_time == other.has_time
                and np.allclose(self.lower, other.lower, rtol=rtol, atol=rtol)
                and np.allclose(self.upper, other.upper, rtol=rtol, atol=rtol))

    def _check(self, other):
        if not self.compatible(other):
            raise GridIncompatible("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.like(self.values + other.values)
        return self.like(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.like(self.values - other.values)
        return self.like(self.values - other)

    def __mul__(self, a):
        return self.like(self.values * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    # ------------------------------------------------------------- norms
    def lp_norm(self, p=2.0):
        """Riemann-sum L^p norm (p = inf gives the max norm)."""
        v = np.abs(self.values)
        if np.isinf(p):
            return float(v.max())
        return float((np.sum(v ** p) * self.cell_volume) ** (1.0 / p))

    def boundary_max(self):
        """Largest |value| on the faces of the box."""
        v = np.abs(self.values)
        out = 0.0
        for ax in range(self.ndim):
            out = max(out, float(np.take(v, 0, axis=ax).max()), float(np.take(v, -1, axis=ax).max()))
        return out

    def holder_seminorm_x(self, alpha):
        """Discrete partial C^alpha seminorm in x: max |f(x+h e_i) - f(x)| / |h|^alpha over steps
        of one and two cells along each spatial axis."""
        out = 0.0
        h = self.spacing
        for ax in range(self.N):
            for k in (1, 2):
                if self.shape[ax] <= k:
                    continue
                d = np.abs(np.diff(self.values, n=1, axis=ax)) if k == 1 else np.abs(
                    np.take(self.values, range(k, self.shape[ax]), axis=ax)
                    - np.take(self.values, range(0, self.shape[ax] - k), axis=ax))
                out = max(out, float(d.max()) / (k * h[ax]) ** alpha)
        return out

    # ------------------------------------------------- difference operators
    def d(self, axis):
        """Second-order central difference, one-sided second order at the faces."""
        return self.like(np.gradient(self.values, self.spacing[axis], axis=axis, edge_order=2))

    def d2(self, i, j):
        if i == j:
            v, h = self.values, self.spacing[i]
            out = np.empty_like(v)
            sl = [slice(None)] * v.ndim

            def at(k):
                s = list(sl)
                s[i] = k
                return v[tuple(s)]

            s = list(sl)
            s[i] = slice(1, -1)
            out[tuple(s)] = (at(slice(2, None)) - 2 * at(slice(1, -1)) + at(slice(None, -2))) / h ** 2
            n = v.shape[i]
            if n >= 4:
                s[i] = 0
                out[tuple(s)] = (2 * at(0) - 5 * at(1) + 4 * at(2) - at(3)) / h ** 2
                s[i] = n - 1
                out[tuple(s)] = (2 * at(n - 1) - 5 * at(n - 2) + 4 * at(n - 3) - at(n - 4)) / h ** 2
            else:
                s[i] = 0
                out[tuple(s)] = out[tuple([slice(None)] * i + [1])]
                s[i] = n - 1
                out[tuple(s)] = out[tuple([slice(None)] * i + [n - 2])]
            return self.like(out)
        return self.d(i).d(j)

    def dt_backward(self):
        """Upwind (backward) second-order difference in t; forward one-sided at the first two rows."""
        if not self.has_time:
            raise ShapeMismatch("grid function has no time axis")
        v, h, ax = self.values, self.spacing[-1], self.ndim - 1
        n = v.shape[ax]
        if n < 3:
            raise ShapeMismatch("need at least three time levels")
        take = lambda a, b: np.take(v, range(a, b), axis=ax)  # noqa: E731
        out = np.empty_like(v)
        back = (3 * take(2, n) - 4 * take(1, n - 1) + take(0, n - 2)) / (2 * h)
        idx = [slice(None)] * v.ndim
        idx[ax] = slice(2, None)
        out[tuple(idx)] = back
        idx[ax] = slice(0, 1)
        out[tuple(idx)] = (-3 * take(0, 1) + 4 * take(1, 2) - take(2, 3)) / (2 * h)
        idx[ax] = slice(1, 2)
        out[tuple(idx)] = (take(2, 3) - take(0, 1)) / (2 * h)
        return self.like(out)

    def drift(self, B):
        """Y u = <B x, grad u> - d_t u."""
        x, _ = self.points()
        Bx = x @ np.asarray(B, dtype=float).T
        out = -self.dt_backward().values
        for i in range(self.N):
            if np.any(Bx[..., i]):
                out = out + Bx[..., i] * self.d(i).values
        return self.like(out)

    def apply_operator(self, A, B, lam=0.0):
        """sum a_ij d_ij u + Y u - lam u with ``A`` a callable t -> (q, q) or (n_t, q, q)."""
        t_axis = self.axes()[-1]
        At = np.asarray(A(t_axis) if callable(A) else A, dtype=float)
        if At.ndim == 2:
            At = np.broadcast_to(At, (t_axis.size,) + At.shape)
        q = At.shape[-1]
        out = self.drift(B).values - lam * self.values
        for i in range(q):
            for j in range(q):
                a = At[:, i, j]
                if np.any(a):
                    out = out + a * self.d2(i, j).values
        return self.like(out)

    def sobolev_norm(self, q, B, p=2.0):
        """Discrete W_X^{2,p} norm: u, d_i u (i <= q), d_ij u (i, j <= q) and Y u."""
        total = self.lp_norm(p)
        for i in range(q):
            total += self.d(i).lp_norm(p)
            for j in range(q):
                total += self.d2(i, j).lp_norm(p)
        return total + self.drift(B).lp_norm(p)

    # ----------------------------------------------------- interpolation
    @cached_property
    def _coeffs(self):
        # cubic extrapolation into ghost layers keeps the spline fourth order up to the faces
        v = self.values
        for ax in range(v.ndim):
            v = _extrapolate(v, ax, _GHOST)
        return ndimage.spline_filter(v, order=3, mode="mirror")

    def sample(self, x, t=None):
        """Cubic-spline values at arbitrary points; zero extension outside the box."""
        x = np.asarray(x, dtype=float)
        pts = x if not self.has_time else np.concatenate(
            [x, np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])[..., None]], axis=-1)
        shape = pts.shape[:-1]
        idx = ((pts.reshape(-1, self.ndim) - self.lower) / self.spacing).T
        out = ndimage.map_coordinates(self._coeffs, idx + _GHOST, order=3, mode="mirror",
                                      prefilter=False)
        inside = np.all((idx >= -1e-9) & (idx <= (np.array(self.shape) - 1)[:, None] + 1e-9), axis=0)
        return np.where(inside, out, 0.0).reshape(shape)

    def as_source(self):
        return Source(self.sample, self.lower, self.upper, self.has_time)

    # --------------------------------------------------------------- I/O
    def columns(self):
        names = [f"x{i + 1}" for i in range(self.N)] + (["t"] if self.has_time else [])
        return names + ["value"]

    def to_csv(self, path):
        """One row per node, columns x1..xN[, t], value, in C order of the grid."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        data = np.column_stack([m.ravel() for m in mesh] + [self.values.ravel()])
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(self.columns())
                w.writerows(data.tolist())
        except OSError as exc:
            raise IOFailure(str(exc)) from exc

    @classmethod
    def from_csv(cls, path, has_time=True):
        """Read a grid written by :meth:`to_csv` (any row order)."""
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise IOFailure(str(exc)) from exc
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if header[-1] != "value" or body.ndim != 2 or body.shape[1] != len(header):
            raise ShapeMismatch(f"{path}: expected columns ending in 'value'")
        coords = body[:, :-1]
        axes = [np.unique(c) for c in coords.T]
        shape = tuple(a.size for a in axes)
        if np.prod(shape) != body.shape[0]:
            raise ShapeMismatch(f"{path}: rows do not form a full grid")
        idx = tuple(np.searchsorted(a, c) for a, c in zip(axes, coords.T))
        values = np.empty(shape)
        values[idx] = body[:, -1]
        return cls([a[0] for a in axes], [a[-1] for a in axes], values, has_time)
