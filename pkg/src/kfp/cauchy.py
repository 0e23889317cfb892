"""Representation formulas and the Cauchy problem for the model operator.

With L = sum a_ij(t) d_ij + <B x, grad> - d_t and damping lam >= 0 the
solution of  L u - lam u = f on R^N x (0, T],  u(., 0) = g  is

    u(x, t) = e^{-lam t} int Gamma(x,t;y,0) g(y) dy
              - int_0^t e^{-lam (t-s)} int Gamma(x,t;y,s) f(y,s) dy ds.

For compactly supported u, u = -int Gamma * (L u) and similarly for d_{x_i} u.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GridIncompatible, SupportNotCompact, UnsupportedCoefficients, ZeroData
from .fundamental import CoefficientPath, FundamentalSolution
from .geometry import Group
from .grid import GridFunction, Source
from .potentials import (SpectralEngine, TimeRule, Weight, pointwise_initial,
                         pointwise_potential)

SUPPORT_TOL = 1e-12


def as_source(f):
    """Accept a :class:`Source` or a :class:`GridFunction` (sampled with cubic splines)."""
    if f is None or isinstance(f, Source):
        return f
    if isinstance(f, GridFunction):
        return f.as_source()
    raise TypeError(f"cannot use {type(f).__name__} as a source")


def check_compact(f, tol=SUPPORT_TOL):
    """Raise SupportNotCompact unless f is negligible on the faces of its box."""
    if isinstance(f, GridFunction):
        peak = float(np.abs(f.values).max())
        if peak > 0 and f.boundary_max() > tol * peak:
            raise SupportNotCompact(
                f"boundary values {f.boundary_max():.3g} exceed {tol:g} of the maximum {peak:.3g}")


def _output_grid(f, grid):
    if grid is not None:
        return grid
    if isinstance(f, GridFunction):
        return f
    raise GridIncompatible("a closed-form source needs an output grid")


def _represent(kernel, f, ell, grid, backend, trule):
    check_compact(f)
    grid = _output_grid(f, grid)
    src = as_source(f)
    if src.N != kernel.N or grid.N != kernel.N:
        raise GridIncompatible(f"source has N={src.N}, grid N={grid.N}, operator N={kernel.N}")
    times = grid.axes()[-1]
    if backend == "spectral":
        eng = SpectralEngine(kernel, grid.lower[:-1], grid.upper[:-1], grid.shape[:-1],
                             src.lower, src.upper, times.max(), min(times.min(), src.lower[-1]))
        vals = eng.potential(src, times, ell, trule=trule)
    elif backend == "pointwise":
        x, _ = grid.points()
        vals = np.stack([pointwise_potential(kernel, src, x[..., k, :], t, ell, trule=trule)
                         for k, t in enumerate(times)], axis=-1)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return GridFunction(grid.lower, grid.upper, -vals, True)


def represent_u(kernel, lbar_u, grid=None, backend="spectral", trule=None):
    """u = -int Gamma(x,t;y,s) Lbar u(y,s) dy ds on ``grid`` (default: the grid of ``lbar_u``)."""
    return _represent(kernel, lbar_u, (), grid, backend, trule)


def represent_first_derivative(kernel, lbar_u, i, grid=None, backend="spectral", trule=None):
    """d_{x_i} u = -int d_{x_i} Gamma(x,t;y,s) Lbar u(y,s) dy ds."""
    if not 0 <= i < kernel.N:
        raise ValueError(f"derivative index {i} out of range")
    return _represent(kernel, lbar_u, (int(i),), grid, backend, trule)


# --------------------------------------------------------------- Cauchy
@dataclass
class CauchyProblem:
    """L u - lam u = f on R^N x (0, T], u(., 0) = g, sampled on a box grid.

    ``lower``/``upper`` bound the x-box of the output grid, ``shape`` has N + 1
    entries (the last counts time levels on [0, T]).  ``f`` is a space-time
    source and ``g`` a spatial one; either may be None (zero).
    """

    group: Group
    path: CoefficientPath
    T: float
    lower: np.ndarray
    upper: np.ndarray
    shape: tuple
    f: object = None
    g: object = None
    lam: float = 0.0
    trule: TimeRule = field(default_factory=TimeRule)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, float)
        self.upper = np.asarray(self.upper, float)
        self.shape = tuple(int(n) for n in self.shape)
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if len(self.shape) != self.group.N + 1 or self.lower.size != self.group.N:
            raise GridIncompatible("grid must have N space axes and one time axis")

    @property
    def kernel(self):
        if not hasattr(self, "_kernel"):
            self._kernel = FundamentalSolution(self.group, self.path)
        return self._kernel

    def grid(self, values=None):
        lo = np.append(self.lower, 0.0)
        hi = np.append(self.upper, self.T)
        return GridFunction(lo, hi, np.zeros(self.shape) if values is None else values, True)

    def sampled_f(self):
        grid = self.grid()
        if self.f is None:
            return grid
        x, t = grid.points()
        return grid.like(as_source(self.f)(x, t))

    def sampled_g(self):
        if self.g is None:
            return None
        grid = self.grid()
        x, _ = grid.points()
        return grid.like(as_source(self.g)(x))

    def scaled(self, a, b):
        """The problem with data (a f, b g)."""
        f = None if self.f is None else _scale(self.f, a)
        g = None if self.g is None else _scale(self.g, b)
        return CauchyProblem(self.group, self.path, self.T, self.lower, self.upper, self.shape,
                             f, g, self.lam, self.trule)


def _scale(src, a):
    if isinstance(src, GridFunction):
        return src * a
    return src.scaled(a)


def _check_problem(problem):
    if not isinstance(problem.path, CoefficientPath):
        raise UnsupportedCoefficients("only coefficients depending on t alone have an explicit kernel")
    N = problem.group.N
    for name, data, timed in (("f", problem.f, True), ("g", problem.g, False)):
        if data is None:
            continue
        has_time = data.has_time
        n_axes = data.N if isinstance(data, (Source, GridFunction)) else None
        if has_time != timed or n_axes != N:
            raise GridIncompatible(f"{name} must be a {'space-time' if timed else 'spatial'} "
                                   f"function of N={N} variables")
    if isinstance(problem.f, GridFunction):
        if problem.f.lower[-1] > 1e-12 or problem.f.upper[-1] < problem.T * (1 - 1e-12):
            raise GridIncompatible("the source grid must cover [0, T]")


def solve_cauchy(problem, backend="spectral", refine=1):
    """Solution of the (damped) Cauchy problem on the problem grid.

    ``refine`` oversamples the spectral FFT grid (see :class:`SpectralEngine`).
    """
    _check_problem(problem)
    kernel = problem.kernel
    grid = problem.grid()
    times = grid.axes()[-1]
    f = as_source(problem.f)
    g = as_source(problem.g)
    damp = np.exp(-problem.lam * times)
    weight = Weight.damping(problem.lam)
    vals = np.zeros(problem.shape)
    if backend == "spectral":
        src_lo = np.full(problem.group.N, np.inf)
        src_hi = np.full(problem.group.N, -np.inf)
        for d in (f, g):
            if d is not None:
                src_lo = np.minimum(src_lo, d.lower[:problem.group.N])
                src_hi = np.maximum(src_hi, d.upper[:problem.group.N])
        if not np.all(np.isfinite(src_lo)):
            return grid
        eng = SpectralEngine(kernel, problem.lower, problem.upper, problem.shape[:-1],
                             src_lo, src_hi, problem.T, 0.0, refine)
        if g is not None:
            vals += eng.initial(g, times) * damp
        if f is not None:
            vals -= eng.potential(f, times, (), weight, problem.trule, s_floor=0.0)
    elif backend == "pointwise":
        x, _ = grid.points()
        for k, t in enumerate(times):
            xk = x[..., k, :]
            if g is not None:
                vals[..., k] += damp[k] * pointwise_initial(kernel, g, xk, t)
            if f is not None:
                vals[..., k] -= pointwise_potential(kernel, f, xk, t, (), weight,
                                                    trule=problem.trule, s_floor=0.0)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return grid.like(vals)


def duhamel_residual(problem, u):
    """Relative L^2 misfit of the finite-difference (L - lam) u against f on the grid."""
    kernel = problem.kernel
    Lu = u.apply_operator(problem.path, kernel.group.B, problem.lam)
    f = problem.sampled_f()
    denom = f.lp_norm(2.0)
    diff = (Lu - f).lp_norm(2.0)
    return {"residual_l2": diff, "source_l2": denom,
            "relative": diff / denom if denom > 0 else float("inf")}


def initial_trace_error(problem, u):
    """max |u(., 0) - g| relative to max |g| (absolute when g = 0)."""
    g = problem.sampled_g()
    u0 = np.take(u.values, 0, axis=-1)
    if g is None:
        return float(np.abs(u0).max())
    g0 = np.take(g.values, 0, axis=-1)
    scale = float(np.abs(g0).max())
    return float(np.abs(u0 - g0).max()) / (scale if scale > 0 else 1.0)


def estimate_cauchy_constant(problem, u, p=2.0):
    """||u||_{W^{2,p}} / (||f||_{L^p} + ||g||_{W^{2,p}}), the datum extended constantly in t."""
    q, B = problem.group.q, problem.group.B
    num = u.sobolev_norm(q, B, p)
    fn = problem.sampled_f().lp_norm(p)
    g = problem.sampled_g()
    gn = 0.0
    if g is not None:
        # a t-independent function has Y g = <B x, grad g>; its norm carries T^{1/p}
        gn = g.sobolev_norm(q, B, p)
    den = fn + gn
    if den == 0:
        raise ZeroData("f and g both vanish")
    return num / den


def manufactured_problem(manufactured, T, lower, upper, shape, input_shape, src_box=None, lam=0.0,
                         trule=None):
    """Cauchy problem whose data are the manufactured u sampled on an input grid.

    ``input_shape`` (N + 1 entries) sets the resolution of the sampled f and g;
    ``src_box`` (x-bounds of the input grids) defaults to the output box.
    """
    group, path = manufactured.group, manufactured.path
    N = group.N
    lo, hi = (np.asarray(lower, float), np.asarray(upper, float)) if src_box is None else \
        (np.asarray(src_box[0], float), np.asarray(src_box[1], float))
    f = GridFunction.from_function(manufactured.lbar, np.append(lo, 0.0), np.append(hi, T), input_shape)
    g = GridFunction.from_function(lambda x: manufactured.u(x, 0.0), lo, hi, input_shape[:N], has_time=False)
    check_compact(g)
    return CauchyProblem(group, path, T, lower, upper, shape, f, g, lam, trule or TimeRule())


def manufactured_error(problem, manufactured, u):
    """Relative L-infinity error of u against the manufactured solution on the output grid."""
    x, t = u.points()
    exact = manufactured.u(x, t)
    return float(np.abs(u.values - exact).max() / np.abs(exact).max())


def refinement_ladder(manufactured, T, lower, upper, shape, input_shapes, src_box=None, lam=0.0,
                      backend="spectral", trule=None):
    """Errors on a fixed output grid while the input data grids are refined."""
    errors = []
    for ish in input_shapes:
        prob = manufactured_problem(manufactured, T, lower, upper, shape, ish, src_box, lam, trule)
        u = solve_cauchy(prob, backend)
        errors.append(manufactured_error(prob, manufactured, u))
    return errors
