"""Group law, dilations and quasidistance induced by a block drift matrix B.

The drift matrix has the lower sub-diagonal block form

    B = [[0,   0,  ..., 0,   0],
         [B_1, 0,  ..., 0,   0],
         [0,   B_2, ..., 0,   0],
         ...
         [0,   0,  ..., B_k, 0]]

with ``B_j`` of shape ``m_j x m_{j-1}`` and full rank.  It is nilpotent, so
``E(t) = exp(-tB)`` is a matrix polynomial in ``t`` and is evaluated exactly.
Points are pairs ``(x, t)`` with ``x`` of shape ``(..., N)`` and ``t`` of shape
``(...)``; every operation broadcasts over leading axes.
"""

from dataclasses import dataclass, field
from functools import cached_property
from math import gamma as gamma_fn
from typing import NamedTuple

import numpy as np

from .errors import (BoxTooSmall, MonotonicityViolated, NonpositiveLambda,
                     RankDeficient, ShapeMismatch)

RANK_RTOL = 1e-10


class Point(NamedTuple):
    """A point ``xi = (x, t)`` of R^{N+1}; ``x`` may carry leading batch axes."""
    x: np.ndarray
    t: np.ndarray


def as_point(p):
    x, t = p
    return Point(np.asarray(x, dtype=float), np.asarray(t, dtype=float))


@dataclass(frozen=True, eq=False)
class BlockStructure:
    """Block description of the drift matrix.

    Parameters
    ----------
    q : int
        Size of the diffusive block (``m_0``).
    m : sequence of int
        Block sizes ``m_1, ..., m_k``.
    blocks : sequence of array_like
        ``B_j`` with shape ``(m_j, m_{j-1})``.
    """
    q: int
    m: tuple = ()
    blocks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        blocks = tuple(np.array(b, dtype=float, ndmin=2) for b in self.blocks)
        for b in blocks:
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def sizes(self):
        return (self.q,) + self.m

    @property
    def N(self):
        return sum(self.sizes)

    def matrix(self):
        """Assemble the N x N matrix B."""
        sizes = self.sizes
        offs = np.concatenate([[0], np.cumsum(sizes)])
        B = np.zeros((self.N, self.N))
        for j, b in enumerate(self.blocks, start=1):
            B[offs[j]:offs[j + 1], offs[j - 1]:offs[j]] = b
        return B

    def to_dict(self):
        return {"q": self.q, "m": list(self.m),
                "blocks": [b.tolist() for b in self.blocks]}

    @classmethod
    def heat(cls, n):
        """B = 0 on R^n (the parabolic case)."""
        return cls(q=n)

    @classmethod
    def kolmogorov(cls):
        """The Kolmogorov operator on R^2: q=1, m=(1,), B_1=[1]."""
        return cls(q=1, m=(1,), blocks=([[1.0]],))

    @classmethod
    def chain(cls, k):
        """Scalar chain q=1, m=(1,)*k with every block equal to [1]."""
        return cls(q=1, m=(1,) * k, blocks=([[1.0]],) * k)


@dataclass(frozen=True)
class GeometryInfo:
    exponents: tuple
    Q: int
    Qplus2: int
    nilpotency_index: int
    omega: float = None
    kappa: float = None

    def to_dict(self):
        return {"exponents": list(self.exponents), "Q": self.Q,
                "Qplus2": self.Qplus2, "nilpotency_index": self.nilpotency_index,
                "omega": self.omega, "kappa": self.kappa}


def validate_structure(spec):
    """Check the block conditions and return the static part of GeometryInfo."""
    if spec.q < 1:
        raise ShapeMismatch("q must be a positive integer")
    if len(spec.blocks) != len(spec.m):
        raise ShapeMismatch(
            f"{len(spec.m)} block sizes but {len(spec.blocks)} blocks")
    sizes = spec.sizes
    if any(v < 1 for v in sizes):
        raise ShapeMismatch("block sizes must be positive")
    if any(a < b for a, b in zip(sizes, sizes[1:])):
        raise MonotonicityViolated(f"block sizes {sizes} are not nonincreasing")
    for j, b in enumerate(spec.blocks, start=1):
        if b.shape != (sizes[j], sizes[j - 1]):
            raise ShapeMismatch(
                f"B_{j} has shape {b.shape}, expected {(sizes[j], sizes[j - 1])}")
        if not np.all(np.isfinite(b)):
            raise ShapeMismatch(f"B_{j} has non-finite entries")
        sv = np.linalg.svd(b, compute_uv=False)
        if sv.size == 0 or sv[0] == 0 or np.sum(sv > RANK_RTOL * sv[0]) < sizes[j]:
            raise RankDeficient(f"B_{j} does not have full rank {sizes[j]}")
    exponents = tuple(2 * j + 1 for j, n in enumerate(sizes) for _ in range(n))
    Q = sum(exponents)
    return GeometryInfo(exponents=exponents, Q=Q, Qplus2=Q + 2,
                        nilpotency_index=len(sizes))


def unit_ball_volume(exponents):
    """Exact Lebesgue measure of {rho < 1} for the given exponents.

    Substituting u_i = |x_i|^{1/q_i} and v = sqrt|t| turns the ball into a
    simplex and the volume into a Dirichlet integral.
    """
    ex = list(exponents) + [2]
    num = np.prod([2.0 * gamma_fn(e + 1) for e in ex])
    return float(num / gamma_fn(sum(ex) + 1))


class Group:
    """The homogeneous group (R^{N+1}, o, D(lambda)) attached to a BlockStructure."""

    def __init__(self, spec, seed=0):
        self.spec = spec
        self.static = validate_structure(spec)
        self.seed = seed
        self.N = spec.N
        self.q = spec.q
        self.B = spec.matrix()
        self.exponents = np.asarray(self.static.exponents, dtype=float)
        self.Q = self.static.Q
        # E(t) = sum_p t^p P_p with P_p = (-B)^p / p!
        P = [np.eye(self.N)]
        for p in range(1, self.static.nilpotency_index):
            P.append(P[-1] @ (-self.B) / p)
        self._P = np.array(P)

    def __repr__(self):
        return f"Group(N={self.N}, q={self.q}, exponents={self.static.exponents})"

    # ---------------------------------------------------------------- algebra
    def E(self, t):
        """exp(-tB), shape ``t.shape + (N, N)``."""
        t = np.asarray(t, dtype=float)
        powers = t[..., None] ** np.arange(len(self._P))
        return np.einsum("...p,pij->...ij", powers, self._P)

    def apply_E(self, t, x):
        """E(t) @ x batched over leading axes."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        out = x
        for p in range(1, len(self._P)):
            out = out + t[..., None] ** p * (x @ self._P[p].T)
        return out

    def compose(self, eta, xi):
        """(y,s) o (x,t) = (x + E(t) y, t + s)."""
        y, s = as_point(eta)
        x, t = as_point(xi)
        return Point(x + self.apply_E(t, y), t + s)

    def invert(self, xi):
        """(y,s)^{-1} = (-E(-s) y, -s)."""
        y, s = as_point(xi)
        return Point(-self.apply_E(-s, y), -s)

    def relative(self, xi, eta):
        """eta^{-1} o xi = (x - E(t-s) y, t - s)."""
        x, t = as_point(xi)
        y, s = as_point(eta)
        return Point(x - self.apply_E(t - s, y), t - s)

    def dilate(self, lam, xi):
        lam = np.asarray(lam, dtype=float)
        if np.any(~(lam > 0)):
            raise NonpositiveLambda("dilation factor must be positive")
        x, t = as_point(xi)
        return Point(x * lam[..., None] ** self.exponents, t * lam ** 2)

    def dilate_x(self, lam, x):
        """D_0(lam) x."""
        lam = np.asarray(lam, dtype=float)
        return np.asarray(x) * lam[..., None] ** self.exponents

    # ---------------------------------------------------------------- metric
    def norm_x(self, x):
        return np.sum(np.abs(x) ** (1.0 / self.exponents), axis=-1)

    def homogeneous_norm(self, xi):
        x, t = as_point(xi)
        return self.norm_x(x) + np.sqrt(np.abs(t))

    def quasidistance(self, xi, eta):
        """d(xi, eta) = ||x - E(t-s) y|| + sqrt|t - s|."""
        return self.homogeneous_norm(self.relative(xi, eta))

    # ---------------------------------------------------------------- balls
    def ball_box(self, r, center=None):
        """Axis-aligned box (lower, upper) in R^{N+1} containing B_r(center)."""
        if center is None:
            cx, ct = np.zeros(self.N), 0.0
        else:
            cx, ct = as_point(center)
        r = float(r)
        half = r ** self.exponents
        for p in range(1, len(self._P)):
            half = half + r ** (2 * p) * np.abs(self._P[p] @ cx)
        lo = np.append(cx - half, ct - r * r)
        hi = np.append(cx + half, ct + r * r)
        return lo, hi

    # ------------------------------------------------------ cached constants
    @cached_property
    def kappa(self):
        return estimate_kappa(self, 100_000, seed=self.seed)

    @cached_property
    def omega(self):
        return estimate_ball_constant(self, (0.5, 1.0, 2.0), 200_000, seed=self.seed).omega

    @property
    def omega_exact(self):
        return unit_ball_volume(self.static.exponents)

    def info(self):
        s = self.static
        return GeometryInfo(s.exponents, s.Q, s.Qplus2, s.nilpotency_index,
                            omega=float(self.omega), kappa=float(self.kappa))


def _sample_points(rng, box, n, N):
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if lo.size == 1:
        lo, hi = np.full(N + 1, lo.item()), np.full(N + 1, hi.item())
    z = rng.uniform(lo, hi, size=(n, N + 1))
    return Point(z[:, :N], z[:, N])


def estimate_kappa(group, sample_count, box=(-1.0, 1.0), seed=0):
    """Empirical quasitriangle / quasisymmetry constant on random triples.

    Returns the largest of 1, d(xi,eta)/(d(xi,zeta)+d(eta,zeta)) and
    d(xi,eta)/d(eta,xi) observed on ``sample_count`` triples drawn uniformly
    from ``box`` (a pair of scalars or of length-(N+1) arrays).
    """
    if sample_count < 1000:
        raise ValueError("sample_count must be at least 1000")
    rng = np.random.default_rng(seed)
    N = group.N
    xi, eta, zeta = (_sample_points(rng, box, sample_count, N) for _ in range(3))
    d_xe = group.quasidistance(xi, eta)
    d_ex = group.quasidistance(eta, xi)
    d_xz = group.quasidistance(xi, zeta)
    d_ez = group.quasidistance(eta, zeta)
    with np.errstate(divide="ignore", invalid="ignore"):
        tri = np.where(d_xz + d_ez > 0, d_xe / (d_xz + d_ez), 0.0)
        sym = np.where(d_ex > 0, d_xe / d_ex, 1.0)
    return float(max(1.0, tri.max(), sym.max()))


@dataclass
class BallVolumeTable:
    omega: float
    omega_stderr: float
    radii: np.ndarray
    volumes: np.ndarray
    ratios: np.ndarray
    stderr: np.ndarray
    consistent: bool
    slope: float = field(default=float("nan"))

    def to_dict(self):
        return {"omega": self.omega, "omega_stderr": self.omega_stderr,
                "radii": self.radii.tolist(), "volumes": self.volumes.tolist(),
                "ratios": self.ratios.tolist(), "stderr": self.stderr.tolist(),
                "consistent": self.consistent, "slope": self.slope}


def ball_volume_mc(group, r, mc_samples, rng, center=None, box_scale=1.0, method="box"):
    """Monte Carlo |B_r(center)| and its standard error.

    ``method="box"`` samples uniformly in the bounding box of the (possibly
    translated) ball.  ``method="power"`` works for balls at the origin only:
    it samples u_i = |x_i|^{1/q_i}, v = sqrt|t| uniformly on [0, r]^{N+1} and
    weights by the Jacobian, which keeps the variance small when the ball
    occupies a tiny fraction of its bounding box.
    """
    if box_scale < 1.0:
        raise BoxTooSmall("sampling box must contain the ball (box_scale >= 1)")
    if method == "power":
        if center is not None:
            raise ValueError("the power-coordinate estimator needs center=None")
        ex = np.append(group.exponents, 2.0)
        u = rng.uniform(0.0, r * box_scale, size=(mc_samples, ex.size))
        w = np.prod(ex * u ** (ex - 1), axis=1) * (u.sum(axis=1) < r)
        scale = (2.0 * r * box_scale) ** ex.size
        return scale * w.mean(), scale * w.std() / np.sqrt(mc_samples)
    lo, hi = group.ball_box(r, center)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * box_scale
    lo, hi = mid - half, mid + half
    c = Point(np.zeros(group.N), 0.0) if center is None else as_point(center)
    z = rng.uniform(lo, hi, size=(mc_samples, group.N + 1))
    inside = group.quasidistance(Point(z[:, :-1], z[:, -1]), c) < r
    vol_box = float(np.prod(hi - lo))
    p = inside.mean()
    return vol_box * p, vol_box * np.sqrt(max(p * (1 - p), 1.0 / mc_samples) / mc_samples)


def estimate_ball_constant(group, r_list, mc_samples, seed=0, center=None,
                           box_scale=1.0, method=None):
    """Monte Carlo estimate of omega = |B_r| / r^{Q+2} with a per-radius table.

    By default balls at the origin use the power-coordinate estimator and
    translated balls use plain bounding-box sampling.
    """
    radii = np.asarray(r_list, dtype=float)
    if radii.size == 0 or np.any(radii <= 0):
        raise ValueError("radii must be positive")
    if method is None:
        method = "power" if center is None else "box"
    rng = np.random.default_rng(seed)
    vols, errs = np.zeros(radii.size), np.zeros(radii.size)
    for k, r in enumerate(radii):
        vols[k], errs[k] = ball_volume_mc(group, r, mc_samples, rng, center, box_scale, method)
    scale = radii ** (group.Q + 2)
    ratios, rerr = vols / scale, errs / scale
    w = 1.0 / rerr ** 2
    omega = float(np.sum(w * ratios) / np.sum(w))
    omega_err = float(1.0 / np.sqrt(np.sum(w)))
    consistent = bool(np.all(np.abs(ratios - omega) <= 3.0 * np.hypot(rerr, omega_err)))
    slope = float("nan")
    if radii.size > 1:
        slope = float(np.polyfit(np.log(radii), np.log(vols), 1)[0])
    return BallVolumeTable(omega, omega_err, radii, vols, ratios, rerr, consistent, slope)


def axiom_suite(group, n=10_000, seed=0, rtol=1e-12):
    """Check the group and metric axioms on random samples.

    Returns a list of ``(name, worst_relative_error, passed)`` tuples.
    """
    rng = np.random.default_rng(seed)
    N = group.N

    def pts():
        return Point(rng.uniform(-1, 1, (n, N)), rng.uniform(-1, 1, n))

    def rel(a, b):
        a = np.column_stack([a[0], a[1]])
        b = np.column_stack([b[0], b[1]])
        scale = np.maximum(np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))
        return float(np.max(np.linalg.norm(a - b, axis=1) / np.maximum(scale, 1.0)))

    def rel_scalar(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)))

    a, b, c = pts(), pts(), pts()
    lam = np.exp(rng.uniform(np.log(0.1), np.log(10.0), n))
    s = rng.uniform(-2, 2, n)
    t = rng.uniform(-2, 2, n)
    results = []
    results.append(("associativity", rel(group.compose(group.compose(a, b), c),
                                         group.compose(a, group.compose(b, c)))))
    zero = Point(np.zeros((n, N)), np.zeros(n))
    results.append(("inverse", max(rel(group.compose(a, group.invert(a)), zero),
                                   rel(group.compose(group.invert(a), a), zero))))
    results.append(("relative_position", rel(group.compose(group.invert(b), a),
                                             group.relative(a, b))))
    results.append(("exp_additivity", float(np.max(np.abs(
        group.E(s + t) - group.E(s) @ group.E(t)) / np.maximum(1.0, np.abs(group.E(s + t)))))))
    results.append(("dilation_automorphism", rel(group.dilate(lam, group.compose(a, b)),
                                                 group.compose(group.dilate(lam, a), group.dilate(lam, b)))))
    results.append(("norm_homogeneity", rel_scalar(group.homogeneous_norm(group.dilate(lam, a)),
                                                   lam * group.homogeneous_norm(a))))
    results.append(("distance_homogeneity", rel_scalar(
        group.quasidistance(group.dilate(lam, a), group.dilate(lam, b)),
        lam * group.quasidistance(a, b))))
    results.append(("left_invariance", rel_scalar(
        group.quasidistance(group.compose(c, a), group.compose(c, b)),
        group.quasidistance(a, b))))
    same_t = Point(b.x, a.t)
    results.append(("equal_time_symmetry", rel_scalar(group.quasidistance(a, same_t),
                                                      group.quasidistance(same_t, a))))
    return [(name, err, bool(err <= rtol)) for name, err in results]
