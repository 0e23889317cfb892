"""Maximal functions, VMO moduli, coverings and empirical a priori estimates.

Balls are B_r(c) = {eta : d(eta, c) < r} with the explicit quasidistance of
:class:`~kfp.geometry.Group`.  On a grid a ball is represented by the grid
nodes it contains, and ball averages are plain means over those nodes (the
grid is uniform, so this is the Riemann-sum average).  Membership is computed
center by center inside the bounding box of the ball, so no pairwise distance
matrix is ever stored.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (EllipticityViolated, EmptyBank, EmptyLadder, GridIncompatible, KTooSmall,
                     RadiusExceedsBox)
from .expr import Expression, ManufacturedSolution
from .geometry import Point, ball_volume_mc
from .grid import GridFunction

MAX_PAIRS = 1_000_000


def _ladder(radii):
    r = np.atleast_1d(np.asarray(radii, dtype=float))
    if r.size == 0:
        raise EmptyLadder("the radius ladder is empty")
    if np.any(~(r > 0)):
        raise ValueError("radii must be positive")
    return np.unique(r)


def _space_time(f):
    if not isinstance(f, GridFunction) or not f.has_time:
        raise GridIncompatible("expected a space-time GridFunction")


class BallScanner:
    """Grid nodes inside metric balls centered at grid nodes (or any point)."""

    def __init__(self, group, grid):
        _space_time(grid)
        if grid.N != group.N:
            raise GridIncompatible(f"grid has N={grid.N}, group has N={group.N}")
        self.group = group
        self.grid = grid
        self.shape = grid.shape
        self.axes = grid.axes()
        self.lower, self.h = grid.lower, grid.spacing
        self.flat = np.arange(int(np.prod(self.shape))).reshape(self.shape)

    def node(self, index):
        z = np.array([ax[k] for ax, k in zip(self.axes, index)])
        return z[:-1], z[-1]

    def index_box(self, r, cx, ct):
        lo, hi = self.group.ball_box(r, Point(cx, ct))
        i0 = np.maximum(np.ceil((lo - self.lower) / self.h - 1e-9).astype(int), 0)
        i1 = np.minimum(np.floor((hi - self.lower) / self.h + 1e-9).astype(int) + 1,
                        np.array(self.shape))
        return i0, i1

    def fits(self, r, cx, ct):
        """True if the bounding box of B_r(c) lies inside the grid box."""
        lo, hi = self.group.ball_box(r, Point(cx, ct))
        return bool(np.all(lo >= self.grid.lower - 1e-12) and np.all(hi <= self.grid.upper + 1e-12))

    def distances(self, r, cx, ct):
        """(slices, d) with d(eta, c) for the grid nodes eta in the bounding box of B_r(c)."""
        i0, i1 = self.index_box(r, cx, ct)
        sl = tuple(slice(a, b) for a, b in zip(i0, i1))
        if np.any(i1 <= i0):
            return sl, None
        g = self.group
        N = g.N
        s = self.axes[-1][sl[-1]]
        shift = g.apply_E(s - ct, np.broadcast_to(cx, (s.size, N)))
        d = np.sqrt(np.abs(s - ct))
        for k in range(N):
            y = self.axes[k][sl[k]]
            dk = np.abs(y[:, None] - shift[None, :, k]) ** (1.0 / g.exponents[k])
            d = d + dk.reshape((1,) * k + (y.size,) + (1,) * (N - 1 - k) + (s.size,))
        return sl, d


def maximal_functions(group, f, radii, sharp=True):
    """Grid approximations (Mf, f#) from all grid-centered balls with radii in the ladder.

    Every node also lies in its own singleton ball, so Mf >= |f| and f# >= 0
    hold exactly.  Balls are truncated to the grid box.
    """
    _space_time(f)
    radii = _ladder(radii)
    scan = BallScanner(group, f)
    v = f.values
    a = np.abs(v)
    M = a.ravel().copy()
    S = np.zeros(M.size)
    for index in np.ndindex(*f.shape):
        cx, ct = scan.node(index)
        sl, d = scan.distances(radii[-1], cx, ct)
        if d is None:
            continue
        sub_a, sub_v, sub_i = a[sl], v[sl], scan.flat[sl]
        for r in radii:
            m = d < r
            idx = sub_i[m]
            if idx.size <= 1:
                continue
            M[idx] = np.maximum(M[idx], sub_a[m].mean())
            if sharp:
                w = sub_v[m]
                S[idx] = np.maximum(S[idx], np.abs(w - w.mean()).mean())
    Mf = f.like(M.reshape(f.shape))
    return (Mf, f.like(S.reshape(f.shape))) if sharp else (Mf, None)


def hl_maximal(group, f, radii):
    """Uncentered Hardy-Littlewood maximal function approximated on the grid."""
    return maximal_functions(group, f, radii, sharp=False)[0]


def sharp_maximal(group, f, radii):
    """Sharp maximal function f# (sup of mean oscillations over balls containing the node)."""
    return maximal_functions(group, f, radii, sharp=True)[1]


def ball_mean_oscillation(scan, values, r, cx, ct):
    """(mean |v - v_B|, node count) over the grid nodes of B_r(c)."""
    sl, d = scan.distances(r, cx, ct)
    if d is None:
        return 0.0, 0
    w = values[sl][d < r]
    if w.size == 0:
        return 0.0, 0
    return float(np.abs(w - w.mean()).mean()), int(w.size)


def partial_oscillation(scan, values, r, cx, ct):
    """Mean of |f(x,t) - f(.,t)_B| over the nodes of B = B_r(c).

    f(.,t)_B averages f(y, t) over all nodes (y, s) of the ball with the time
    frozen at t, so each spatial node y is weighted by the number of time
    levels at which it belongs to the ball.
    """
    sl, d = scan.distances(r, cx, ct)
    if d is None:
        return 0.0
    m = d < r
    count = int(m.sum())
    if count == 0:
        return 0.0
    F = values[sl]
    N = F.ndim - 1
    weight = m.sum(axis=-1)
    P = np.tensordot(weight, F, axes=N) / count
    return float(np.abs(F - P)[m].sum() / count)


@dataclass
class VMOReport:
    """eta_f(r) on a radius ladder; ``at_radius`` is the sup at rho = r alone."""

    radii: np.ndarray
    eta: np.ndarray
    at_radius: np.ndarray
    centers: list
    sup_norm: float

    def to_dict(self):
        return {"radii": self.radii.tolist(), "eta": self.eta.tolist(),
                "at_radius": self.at_radius.tolist(), "centers": list(self.centers),
                "sup_norm": self.sup_norm}


def _center_indices(shape, stride):
    stride = np.broadcast_to(np.asarray(stride, dtype=int), (len(shape),))
    axes = [np.arange(0, n, max(int(s), 1)) for n, s in zip(shape, stride)]
    return [tuple(ix) for ix in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(shape))]


def vmo_modulus(group, f, radii, stride=2):
    """Partial VMO_x modulus eta_f(r) = sup over sampled centers and rho <= r.

    Centers are the grid nodes on a stride lattice whose ball fits in the grid
    box; the result is therefore a lower bound for the true modulus.  Raises
    RadiusExceedsBox when no sampled ball of some radius fits.
    """
    _space_time(f)
    radii = _ladder(radii)
    scan = BallScanner(group, f)
    centers = _center_indices(f.shape, stride)
    at_r, used = np.zeros(radii.size), []
    for k, r in enumerate(radii):
        n = 0
        for index in centers:
            cx, ct = scan.node(index)
            if not scan.fits(r, cx, ct):
                continue
            n += 1
            at_r[k] = max(at_r[k], partial_oscillation(scan, f.values, r, cx, ct))
        if n == 0:
            raise RadiusExceedsBox(f"no ball of radius {r:g} fits in the grid box")
        used.append(n)
    return VMOReport(radii, np.maximum.accumulate(at_r), at_r, used, float(np.abs(f.values).max()))


def coefficient_vmo(group, coeff, grid, radii, stride=2):
    """a#(R) = max_ij eta_{a_ij}(R) for coefficients ``coeff(x, t) -> (..., q, q)``."""
    x, t = grid.points()
    A = np.asarray(coeff(x, t), dtype=float)
    q = A.shape[-1]
    reports = {}
    for i in range(q):
        for j in range(i, q):
            reports[(i, j)] = vmo_modulus(group, grid.like(A[..., i, j]), radii, stride)
    eta = np.max([r.eta for r in reports.values()], axis=0)
    first = next(iter(reports.values()))
    return VMOReport(first.radii, eta, np.max([r.at_radius for r in reports.values()], axis=0),
                     first.centers, max(r.sup_norm for r in reports.values()))


# ------------------------------------------------------------- coverings
@dataclass
class BallFamily:
    """Centers of a covering by B_R balls and the measured overlap of the H-dilated balls."""

    centers: np.ndarray
    radius: float
    H: float
    overlap_bound: int
    covered: bool
    n_points: int
    counts: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {"n_centers": int(len(self.centers)), "radius": self.radius, "H": self.H,
                "overlap_bound": self.overlap_bound, "covered": self.covered,
                "n_points": self.n_points}


def covering_shape(group, lower, upper, R, resolution=1.0):
    """Grid shape resolving B_{R/2}: spacing (R/2)^{q_k}/resolution per axis ((R/2)^2 in t)."""
    ex = np.append(group.exponents, 2.0)
    h = (0.5 * R) ** ex / resolution
    return tuple(int(np.ceil((b - a) / hk)) + 1 for a, b, hk in zip(lower, upper, h))


def build_covering(group, lower, upper, R, H=2.0, shape=None, resolution=1.0, max_points=200_000):
    """Greedy maximal R/2-separated centers among the grid nodes of a box.

    Nodes are visited in grid order and a node becomes a center unless it lies
    within R/2 of an earlier center, so every node is covered by some B_R
    ball.  The overlap bound is the largest number of H-dilated balls
    containing a grid node.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if not H > 1:
        raise ValueError("H must exceed 1")
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if lower.size != group.N + 1:
        raise GridIncompatible("the box needs N space bounds and one time bound")
    if shape is None:
        shape = covering_shape(group, lower, upper, R, resolution)
    shape = tuple(max(int(n), 2) for n in shape)
    n = int(np.prod(shape))
    if n > max_points:
        raise ValueError(f"covering grid has {n} nodes (limit {max_points})")
    mesh = np.meshgrid(*[np.linspace(a, b, m) for a, b, m in zip(lower, upper, shape)], indexing="ij")
    pts = Point(np.stack([m.ravel() for m in mesh[:-1]], axis=-1), mesh[-1].ravel())
    covered = np.zeros(n, dtype=bool)
    counts = np.zeros(n, dtype=int)
    nearest = np.full(n, np.inf)
    centers = []
    while not covered.all():
        k = int(np.argmin(covered))
        c = Point(pts.x[k], pts.t[k])
        d = group.quasidistance(pts, c)
        covered |= d < 0.5 * R
        covered[k] = True
        counts += d < H * R
        nearest = np.minimum(nearest, d)
        centers.append(np.append(pts.x[k], pts.t[k]))
    return BallFamily(np.array(centers), float(R), float(H), int(counts.max()),
                      bool(np.all(nearest < R)), n, counts.reshape(shape))


def covering_ladder(group, half_widths, radii, H=2.0, shape=None, center=None):
    """Coverings of the boxes center +- D(R) half_widths for each R of the ladder.

    With a fixed grid shape the boxes are images of one another under the
    dilations, so the measured overlap bounds isolate the R-dependence of the
    construction.  Returns the families and the spread max - min of the bounds.
    """
    half_widths = np.asarray(half_widths, dtype=float)
    ex = np.append(group.exponents, 2.0)
    center = np.zeros(group.N + 1) if center is None else np.asarray(center, float)
    shape = (15,) * (group.N + 1) if shape is None else shape
    fams = []
    for R in _ladder(radii):
        half = half_widths * R ** ex
        fams.append(build_covering(group, center - half, center + half, R, H, shape))
    bounds = [f.overlap_bound for f in fams]
    return {"radii": [f.radius for f in fams], "overlap_bounds": bounds,
            "spread": int(max(bounds) - min(bounds)), "covered": all(f.covered for f in fams),
            "families": fams}


# ------------------------------------------------------- measure witnesses
def doubling_witness(group, radii, centers=None, mc_samples=100_000, seed=0):
    """Monte Carlo |B_2r(c)| / |B_r(c)| against the bound 2^{Q+2}.

    The ratio passes when it does not exceed 2^{Q+2} by more than three
    combined standard errors.
    """
    rng = np.random.default_rng(seed)
    radii = _ladder(radii)
    if centers is None:
        centers = [None]
    bound = 2.0 ** (group.Q + 2)
    rows = []
    for c in centers:
        cp = None if c is None else Point(np.asarray(c[:-1], float), float(c[-1]))
        for r in radii:
            method = "power" if cp is None else "box"
            v1, e1 = ball_volume_mc(group, r, mc_samples, rng, cp, method=method)
            v2, e2 = ball_volume_mc(group, 2 * r, mc_samples, rng, cp, method=method)
            ratio = v2 / v1
            tol = 3.0 * np.hypot(e1 / v1, e2 / v2)
            rows.append({"center": None if c is None else list(map(float, c)), "r": float(r),
                         "ratio": float(ratio), "rel_tol": float(tol),
                         "pass": bool(ratio <= bound * (1 + tol))})
    return {"bound": bound, "rows": rows, "worst": max(r["ratio"] for r in rows),
            "excess": max(r["ratio"] / bound - 1.0 for r in rows),
            "rel_tol": max(r["rel_tol"] for r in rows), "pass": all(r["pass"] for r in rows)}


def half_ball_witness(group, T, points, radii, mc_samples=100_000, seed=0):
    """Monte Carlo |B_r(xi) cap {s < T}| / |B_r(xi)| for xi with t < T (should be >= 1/2)."""
    rng = np.random.default_rng(seed)
    rows = []
    for p in points:
        cx, ct = np.asarray(p[:-1], float), float(p[-1])
        if not ct < T:
            raise ValueError("points must lie in the strip t < T")
        for r in _ladder(radii):
            lo, hi = group.ball_box(r, Point(cx, ct))
            z = rng.uniform(lo, hi, size=(mc_samples, group.N + 1))
            inside = group.quasidistance(Point(z[:, :-1], z[:, -1]), Point(cx, ct)) < r
            n_in = int(inside.sum())
            frac = float(np.sum(inside & (z[:, -1] < T)) / max(n_in, 1))
            se = np.sqrt(max(frac * (1 - frac), 1.0 / max(n_in, 1)) / max(n_in, 1))
            rows.append({"point": list(map(float, p)), "r": float(r), "fraction": frac,
                         "stderr": float(se), "pass": bool(frac >= 0.5 - 3 * se)})
    return {"rows": rows, "worst": min(r["fraction"] for r in rows),
            "pass": all(r["pass"] for r in rows)}


# ----------------------------------------------------------------- banks
def make_u_bank(group, n=6, seed=0, lower=None, upper=None, t_range=(0.2, 1.0)):
    """Smooth compactly supported closed-form functions u(x, t) (as expression strings).

    Each is a product of bumps in every variable (anisotropic widths scaled
    like the dilations) times one of: 1, a plane wave, or a quadratic.
    """
    rng = np.random.default_rng(seed)
    N = group.N
    lower = np.full(N, -1.0) if lower is None else np.asarray(lower, float)
    upper = np.full(N, 1.0) if upper is None else np.asarray(upper, float)
    half = 0.5 * (upper - lower)
    t0, t1 = t_range
    bank = []
    for k in range(n):
        lam = rng.uniform(0.6, 1.0)
        w = np.minimum(half * lam ** group.exponents, half)
        c = 0.5 * (lower + upper) + rng.uniform(-0.2, 0.2, N) * (half - w)
        tw = rng.uniform(0.35, 0.5) * (t1 - t0)
        tc = 0.5 * (t0 + t1) + rng.uniform(-0.1, 0.1) * (t1 - t0)
        factors = [f"bump(x{a + 1}, {c[a]:.6f}, {w[a]:.6f})" for a in range(N)]
        factors.append(f"bump(t, {tc:.6f}, {tw:.6f})")
        kind = k % 3
        if kind == 1:
            kv = rng.normal(size=N) * 2.0 / w
            phase = " + ".join(f"{kv[a]:.6f}*x{a + 1}" for a in range(N))
            factors.append(f"cos({phase} + {rng.uniform(0, 6.28):.6f})")
        elif kind == 2:
            factors.append(f"(1 + {rng.uniform(-1, 1):.6f}*x1/{w[0]:.6f} "
                           f"+ {rng.uniform(-1, 1):.6f}*(x1/{w[0]:.6f})^2)")
        bank.append("*".join(factors))
    return bank


def _as_expression(u, N):
    return u if isinstance(u, Expression) else Expression(u, N)


# ------------------------------------------------------ oscillation bound
def check_oscillation_bound(group, path, u_bank, k_ladder, p, r_ladder, lower, upper, shape,
                            pairs=None, balls_per_radius=8, maximal_radii=None, kappa=None,
                            seed=0):
    """Empirical constant in the mean-oscillation estimate for second derivatives.

    For sampled balls B_r(xbar) and a node xi0 of the ball, the left side is the
    mean oscillation of d_ij u over B_r(xbar); the right side is
    M(Lbar u)(xi0)/k + k^{(Q+2)/p} (|B_kr|^{-1} int_{B_kr} |Lbar u|^p)^{1/p}.
    The constant reported is the largest ratio left/right; its spread over the
    k and r ladders is reported too.  The grid box must contain the support of
    Lbar u (the integral over B_kr is taken over the grid part of the ball and
    divided by the exact ball volume).
    """
    k_ladder = np.asarray(k_ladder, dtype=float)
    kappa = group.kappa if kappa is None else float(kappa)
    if k_ladder.size == 0:
        raise EmptyLadder("the k ladder is empty")
    if k_ladder.min() < 4 * kappa:
        raise KTooSmall(f"k = {k_ladder.min():g} is below 4 kappa = {4 * kappa:g}")
    if not u_bank:
        raise EmptyBank("the bank is empty")
    r_ladder = _ladder(r_ladder)
    maximal_radii = r_ladder if maximal_radii is None else _ladder(maximal_radii)
    q, N = group.q, group.N
    pairs = [(i, j) for i in range(q) for j in range(i, q)] if pairs is None else list(pairs)
    rng = np.random.default_rng(seed)
    omega = group.omega_exact
    grid = GridFunction(lower, upper, np.zeros(shape))
    x, t = grid.points()
    scan = BallScanner(group, grid)
    fitting = []
    nodes = np.concatenate([x.reshape(-1, N), t.reshape(-1, 1)], axis=1)
    for r in r_ladder:
        fits = [ix for ix in np.ndindex(*grid.shape) if scan.fits(r, *scan.node(ix))]
        if not fits:
            raise RadiusExceedsBox(f"no ball of radius {r:g} fits in the grid box")
        fitting.append(nodes[np.ravel_multi_index(np.array(fits).T, grid.shape)])
    # balls and base points are drawn in physical coordinates and snapped to
    # the grid, so a refined grid samples (nearly) the same balls
    balls = []
    for a, (r, centers) in enumerate(zip(r_ladder, fitting)):
        for _ in range(balls_per_radius):
            z = rng.uniform(centers.min(axis=0), centers.max(axis=0))
            c = centers[np.argmin(np.sum(((centers - z) / grid.spacing) ** 2, axis=1))]
            sl, d = scan.distances(r, c[:-1], c[-1])
            members = scan.flat[sl][d < r]
            if members.size < 2:
                continue
            lo, hi = group.ball_box(r, Point(c[:-1], c[-1]))
            for _ in range(1000):
                w = rng.uniform(lo, hi)
                if group.quasidistance(Point(w[:-1], w[-1]), Point(c[:-1], c[-1])) < r:
                    break
            near = np.sum(((nodes[members] - w) / grid.spacing) ** 2, axis=1)
            balls.append((a, r, c[:-1], c[-1], members, members[np.argmin(near)]))
    ratios = np.full((len(u_bank), r_ladder.size, k_ladder.size), 0.0)
    rows = []
    for b, u in enumerate(u_bank):
        m = ManufacturedSolution(_as_expression(u, N), group, path)
        lbar = grid.like(m.lbar(x, t))
        Mf = hl_maximal(group, lbar, maximal_radii).values
        lp = np.abs(lbar.values) ** p
        D2 = [m.d2(i, j)(x, t) for i, j in pairs]
        for a, r, cx, ct, members, xi0 in balls:
            lhs = max(float(np.abs(w.ravel()[members] - w.ravel()[members].mean()).mean()) for w in D2)
            for c, k in enumerate(k_ladder):
                slk, dk = scan.distances(k * r, cx, ct)
                integral = 0.0 if dk is None else float(lp[slk][dk < k * r].sum()) * grid.cell_volume
                avg = integral / (omega * (k * r) ** (group.Q + 2))
                rhs = Mf.ravel()[xi0] / k + k ** ((group.Q + 2) / p) * avg ** (1.0 / p)
                ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else np.inf)
                ratios[b, a, c] = max(ratios[b, a, c], ratio)
                rows.append({"member": b, "r": float(r), "k": float(k), "lhs": lhs, "rhs": rhs,
                             "ratio": float(ratio)})
    by_k = ratios.max(axis=(0, 1))
    by_r = ratios.max(axis=(0, 2))
    return {"constant": float(ratios.max()), "p": float(p), "kappa": kappa,
            "k_ladder": k_ladder.tolist(), "r_ladder": r_ladder.tolist(),
            "by_k": by_k.tolist(), "by_r": by_r.tolist(),
            "k_spread": _spread(by_k), "r_spread": _spread(by_r),
            "finite": bool(np.isfinite(ratios).all()), "rows": rows}


def _spread(v):
    v = np.asarray(v, dtype=float)
    v = v[v > 0]
    return float(v.max() / v.min()) if v.size else float("nan")


# ---------------------------------------------------------- Sobolev estimate
def sample_coefficients(coeff, grid, nu):
    """a_ij(x, t) on the grid, checked against nu |xi|^2 <= <A xi, xi> <= |xi|^2 / nu."""
    x, t = grid.points()
    A = np.asarray(coeff(x, t), dtype=float)
    A = np.broadcast_to(A, grid.shape + A.shape[-2:])
    ev = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    lo, hi = float(ev.min()), float(ev.max())
    if lo < nu * (1 - 1e-12) or hi > (1 + 1e-12) / nu:
        raise EllipticityViolated(f"eigenvalues in [{lo:.4g}, {hi:.4g}], outside [{nu:g}, {1 / nu:g}]")
    return A


def apply_variable_operator(u, A, B):
    """sum a_ij(x,t) d_ij u + Y u by finite differences, A of shape grid.shape + (q, q)."""
    out = u.drift(B).values
    q = A.shape[-1]
    for i in range(q):
        for j in range(q):
            a = A[..., i, j]
            if np.any(a):
                out = out + a * u.d2(i, j).values
    return u.like(out)


def _sample_u(u, grid, N):
    if isinstance(u, GridFunction):
        grid._check(u)
        return u
    fn = u if callable(u) else Expression(u, N)
    x, t = grid.points()
    return grid.like(fn(x, t))


def check_sobolev_estimate(group, coeff, nu, u_bank, p, lower, upper, shape, lam_ladder=(),
                           eps_ladder=None):
    """Empirical constants for the global W^{2,p}_X estimate and the interpolation inequality.

    ``coeff(x, t)`` returns a_ij with shape (..., q, q).  For each u of the bank
    (expression strings, callables or GridFunctions on the same grid) the
    report holds ||u||_{W^{2,p}_X} / (||Lu||_p + ||u||_p), the damped ratios
    ||u||_{W^{2,p}_X} / ||Lu - lam u||_p along ``lam_ladder``, and the smallest
    c_p with ||d_i u|| <= eps ||d_ii u|| + (c_p/eps) ||u|| on ``eps_ladder``
    (plus its sup over all eps > 0, ||d_i u||^2 / (4 ||d_ii u|| ||u||)).
    """
    if not u_bank:
        raise EmptyBank("the bank is empty")
    N, q, B = group.N, group.q, group.B
    grid = GridFunction(lower, upper, np.zeros(shape))
    A = sample_coefficients(coeff, grid, nu)
    lam_ladder = np.asarray(lam_ladder, dtype=float)
    eps_ladder = np.geomspace(1e-2, 1e1, 13) if eps_ladder is None else np.asarray(eps_ladder, float)
    ratios, damped, interp, interp_opt, members = [], [], [], [], []
    for u in u_bank:
        U = _sample_u(u, grid, N)
        Lu = apply_variable_operator(U, A, B)
        W = U.sobolev_norm(q, B, p)
        un, Ln = U.lp_norm(p), Lu.lp_norm(p)
        ratios.append(W / (Ln + un))
        damped.append([W / (Lu - U * lam).lp_norm(p) for lam in lam_ladder])
        cps, opts = [], []
        for i in range(q):
            a, b = U.d(i).lp_norm(p), U.d2(i, i).lp_norm(p)
            cps.append(max(0.0, float(np.max(eps_ladder * (a - eps_ladder * b))) / un))
            opts.append(a * a / (4 * b * un))
        interp.append(max(cps))
        interp_opt.append(max(opts))
        members.append({"W2p": W, "Lu": Ln, "u": un, "ratio": ratios[-1]})
    damped = np.array(damped).reshape(len(u_bank), lam_ladder.size)
    return {"p": float(p), "constant": float(max(ratios)), "ratios": ratios,
            "lambda": lam_ladder.tolist(),
            "damped_constant": damped.max(axis=0).tolist() if lam_ladder.size else [],
            "interp_constant": float(max(interp)), "interp_sup": float(max(interp_opt)),
            "eps_ladder": eps_ladder.tolist(), "members": members,
            "finite": bool(np.all(np.isfinite(ratios)) and np.all(np.isfinite(damped)))}


# --------------------------------------------------------- bank statistics
def maximal_bank_report(group, bank, radii, p=2.0):
    """||Mf||_p / ||f||_p and ||f||_p / ||f#||_p over a bank of grid functions.

    ``dominance_gap`` is max(|f| - Mf) over the bank and the grid (never positive).
    """
    if not bank:
        raise EmptyBank("the bank is empty")
    hl, fs = [], []
    gap = -np.inf
    for f in bank:
        Mf, Sf = maximal_functions(group, f, radii)
        gap = max(gap, float(np.max(np.abs(f.values) - Mf.values)))
        hl.append(Mf.lp_norm(p) / f.lp_norm(p))
        fs.append(f.lp_norm(p) / Sf.lp_norm(p))
    return {"p": float(p), "hl_ratio": hl, "fs_ratio": fs,
            "hl_max": float(max(hl)), "fs_max": float(max(fs)),
            "hl_spread": _spread(hl), "fs_spread": _spread(fs), "dominance_gap": gap,
            "finite": bool(np.all(np.isfinite(hl)) and np.all(np.isfinite(fs)))}
