"""Space-time potentials of the fundamental solution.

Everything here computes, for a source f supported in a box,

    V(x, t) = int_0^inf w(tau) int_{R^N} D^ell Gamma(x, t; y, t - tau) f(y, t - tau) dy dtau

with ell one of (), (i,) or (i, j) and w a time weight (damping, truncation).
``initial_*`` computes the single slice int D^ell Gamma(x, t; y, s0) g(y) dy.

Two engines are provided.

pointwise
    For each output point the y-integral is taken in whitened coordinates
    y = E(-tau)(x - L z), 2C = L L^T, where Gamma dy becomes the standard
    normal density phi(z) dz.  The z-box is the Gaussian box [-R, R]^N cut
    down to the preimage of the source's support.  Derivatives use the
    difference form  int K(z) phi (f(y) - f(E(-tau) x)) dz + f(E(-tau) x) int_box K phi dz
    with the last integral in closed form, so nothing singular is summed.
spectral
    On a padded periodic x-grid, int D^ell Gamma f dy is the convolution of
    the sheared source f(E(-tau) z, s) with a Gaussian, i.e. a product with
    (i k)^ell exp(-k^T C k) in Fourier space.  Spectra are accumulated over
    the tau-rule and inverted once per output time.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.special import ndtr

from .errors import ShapeMismatch
from .fundamental import TAIL_MASS, chi2_radius
from .grid import GridFunction, Source
from .quadrature import composite_rule, gauss_legendre, graded_breaks, merge_breaks

_SQ2PI = np.sqrt(2.0 * np.pi)


@dataclass
class TimeRule:
    """Controls the tau-quadrature: panel width, nodes per panel, grading near tau = 0."""

    dtau: float = 0.05
    nodes: int = 8
    graded: bool = False
    ratio: float = 0.25
    depth: float = 1e-12


@dataclass
class SpaceRule:
    """Controls the z-quadrature: panels and nodes per axis (``kink_levels`` grades toward kinks)."""

    panels: int = 6
    nodes: int = 8
    kink_levels: int = 8
    kink_ratio: float = 0.3
    kink_nodes: int = 6


@dataclass
class Weight:
    """Time weight w(tau) with the points where it is not smooth."""

    func: object = None
    breaks: tuple = ()
    support: tuple = (0.0, np.inf)
    label: str = "one"

    def __call__(self, tau):
        if self.func is None:
            return np.ones_like(np.asarray(tau, dtype=float))
        return self.func(tau)

    @staticmethod
    def damping(lam):
        lam = float(lam)
        if lam == 0:
            return Weight()
        return Weight(lambda tau: np.exp(-lam * np.asarray(tau)), label=f"exp(-{lam} tau)")

    def times(self, other):
        f, g = self, other
        return Weight(lambda tau: f(tau) * g(tau), tuple(f.breaks) + tuple(g.breaks),
                      (max(f.support[0], g.support[0]), min(f.support[1], g.support[1])),
                      f"{f.label}*{g.label}")


# ------------------------------------------------------------ tau rule
def tau_rule(lo, hi, rule, extra=(), grade_at_zero=False):
    """Nodes and weights on [lo, hi] with panels no wider than ``rule.dtau``."""
    if hi <= lo:
        return np.zeros(0), np.zeros(0)
    pts = list(merge_breaks(lo, hi, extra))
    if grade_at_zero and lo == 0.0:
        first = pts[1]
        g = graded_breaks(0.0, first, ratio=rule.ratio, min_width=rule.depth * max(first, 1e-300))
        pts = list(g) + pts[2:]
    fine = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, int(np.ceil((b - a) / rule.dtau - 1e-9)))
        fine.extend(np.linspace(a, b, k + 1)[1:])
    return composite_rule(np.array(fine), rule.nodes)


def _coefficient_tau_breaks(kernel, t):
    return [t - b for b in kernel.path.breakpoints if b < t]


# --------------------------------------------------------- closed-form moments
def _box_moments(a, b):
    """Per-axis 1-d integrals over [a, b] of phi, z phi and (z^2 - 1) phi."""
    pa = np.exp(-0.5 * a * a) / _SQ2PI
    pb = np.exp(-0.5 * b * b) / _SQ2PI
    m0 = ndtr(b) - ndtr(a)
    m1 = pa - pb
    with np.errstate(invalid="ignore"):
        m2 = np.where(np.isfinite(a), a * pa, 0.0) - np.where(np.isfinite(b), b * pb, 0.0)
    return m0, m1, m2


def _moment_tensor(a, b, order):
    """int_box He(z) phi dz for the Hermite tensor of the given order (0, 1 or 2); a, b: (M, N)."""
    m0, m1, m2 = _box_moments(a, b)
    M, N = a.shape
    if order == 0:
        return np.prod(m0, axis=1)
    if order == 1:
        out = np.empty((M, N))
        for k in range(N):
            out[:, k] = m1[:, k] * np.prod(np.delete(m0, k, axis=1), axis=1)
        return out
    out = np.empty((M, N, N))
    for k in range(N):
        for l in range(N):
            if k == l:
                out[:, k, k] = m2[:, k] * np.prod(np.delete(m0, k, axis=1), axis=1)
            else:
                out[:, k, l] = m1[:, k] * m1[:, l] * np.prod(np.delete(m0, [k, l], axis=1), axis=1)
    return out


# ------------------------------------------------------------ reference rules
@lru_cache(maxsize=32)
def _ref_rule(panels, nodes):
    x, w = composite_rule(np.linspace(0.0, 1.0, panels + 1), nodes)
    return x, w


@lru_cache(maxsize=32)
def _ref_rule_graded(levels, ratio, nodes):
    """Rule on [0, 1] graded geometrically toward both ends."""
    half = [0.5 * ratio ** k for k in range(levels)][::-1]
    br = np.unique(np.concatenate([[0.0], half, [0.5], 1.0 - np.array(half), [1.0]]))
    return composite_rule(br, nodes)


# ------------------------------------------------------------- pointwise
def _whitening(kernel, t, tau):
    _, _, _, Lhat = kernel.scaled_tau(t, tau)
    L = np.sqrt(2.0) * Lhat * (tau ** (0.5 * kernel.exponents))[:, None]
    return L, np.linalg.inv(L)


_BLOCK_NODES = 2_000_000


def _inner_pointwise(kernel, src, x, t, tau, ell, srule, R):
    """int D^ell Gamma(x, t; y, t - tau) f(y, t - tau) dy for points x (M, N)."""
    N = x.shape[1]
    if ell:
        # D^ell Gamma is the density times |P|^|ell|, up to tau^{-3} for the slow variables
        # with tau -> 0: widen the z-box so the dropped tail stays at TAIL_MASS after scaling
        P = _whitening(kernel, t, tau)[1].T
        scale = float(np.prod([np.linalg.norm(P[i]) for i in ell]))
        if scale > 1.0:
            wide = chi2_radius(N, TAIL_MASS / scale)
            srule = replace(srule, panels=int(np.ceil(srule.panels * wide / R)))
            R = wide
    per_point = (srule.panels * srule.nodes) ** (N - 1) * max(
        srule.panels * srule.nodes, (len(src.kinks) + 1) * srule.kink_levels * 2 * srule.kink_nodes)
    step = max(1, _BLOCK_NODES // per_point)
    if x.shape[0] <= step:
        return _inner_block(kernel, src, x, t, tau, ell, srule, R)
    return np.concatenate([_inner_block(kernel, src, x[k:k + step], t, tau, ell, srule, R)
                           for k in range(0, x.shape[0], step)])


def _inner_block(kernel, src, x, t, tau, ell, srule, R):
    M, N = x.shape
    s = t - tau
    L, Linv = _whitening(kernel, t, tau)
    Einv = kernel.group.E(-tau)
    ylo, yhi = src.lower[:N], src.upper[:N]
    # z = Linv x - Linv E(tau) y over the support box
    A = Linv @ kernel.group.E(tau)
    c = x @ Linv.T
    lo_y = np.minimum(A * ylo, A * yhi).sum(axis=1)
    hi_y = np.maximum(A * ylo, A * yhi).sum(axis=1)
    a = np.maximum(c - hi_y, -R)
    b = np.minimum(c - lo_y, R)
    empty = np.any(b <= a, axis=1)
    b = np.where(empty[:, None], a, b)
    # per-axis segments (axis 0 split at Hoelder kinks)
    if src.kinks:
        kz = np.sort(np.array([(x[:, 0] - kc) / L[0, 0] for kc in src.kinks]), axis=0)
        cuts = np.clip(kz, a[:, :1].T, b[:, :1].T)
        edges0 = np.concatenate([a[:, :1].T, cuts, b[:, :1].T], axis=0)  # (K+2, M)
        r0, w0 = _ref_rule_graded(srule.kink_levels, srule.kink_ratio, srule.kink_nodes)
        seg_lo, seg_hi = edges0[:-1], edges0[1:]
        z0 = (seg_lo[:, :, None] + (seg_hi - seg_lo)[:, :, None] * r0).transpose(1, 0, 2).reshape(M, -1)
        wz0 = ((seg_hi - seg_lo)[:, :, None] * w0).transpose(1, 0, 2).reshape(M, -1)
    else:
        r0, w0 = _ref_rule(srule.panels, srule.nodes)
        z0 = a[:, :1] + (b - a)[:, :1] * r0
        wz0 = (b - a)[:, :1] * w0
    rr, wr = _ref_rule(srule.panels, srule.nodes)
    axes = [z0] + [a[:, k:k + 1] + (b - a)[:, k:k + 1] * rr for k in range(1, N)]
    waxes = [wz0] + [(b - a)[:, k:k + 1] * wr for k in range(1, N)]
    grids = np.meshgrid(*[np.arange(ax.shape[1]) for ax in axes], indexing="ij")
    Z = np.stack([axes[k][:, grids[k].ravel()] for k in range(N)], axis=-1)      # (M, P, N)
    W = np.prod(np.stack([waxes[k][:, grids[k].ravel()] for k in range(N)], axis=-1), axis=-1)
    W = W * np.exp(-0.5 * np.sum(Z * Z, axis=-1)) / _SQ2PI ** N
    Y = (x[:, None, :] - Z @ L.T) @ Einv.T
    F = src(Y, s)
    order = len(ell)
    if order == 0:
        out = np.einsum("mp,mp->m", W, F)
        return np.where(empty, 0.0, out)
    fbar = src(x @ Einv.T, s)
    D = F - fbar[:, None]
    P = Linv.T                                            # L^{-T}
    if order == 1:
        i = ell[0]
        Gz = np.einsum("mp,mpk->mk", W * D, Z) + fbar[:, None] * _moment_tensor(a, b, 1)
        out = -Gz @ P[i]
    else:
        i, j = ell
        Pi, Pj = P[i], P[j]
        Zi = Z @ Pi
        Zj = Z @ Pj
        out = np.einsum("mp,mp->m", W * D, Zi * Zj - Pi @ Pj)
        out = out + fbar * np.einsum("mkl,k,l->m", _moment_tensor(a, b, 2), Pi, Pj)
    return np.where(empty, 0.0, out)


def pointwise_potential(kernel, src, x, t, ell=(), weight=None, srule=None, trule=None,
                        s_floor=-np.inf):
    """V(x, t) at points x (..., N) sharing the time t, by nested quadrature.

    Source times below ``s_floor`` are ignored (used for the Cauchy problem on t > 0).
    """
    weight = weight or Weight()
    srule = srule or SpaceRule()
    trule = trule or TimeRule(graded=bool(src.kinks))
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    xf = x.reshape(-1, kernel.N)
    s_lo = max(float(src.lower[-1]), s_floor)
    lo = max(0.0, t - float(src.upper[-1]), weight.support[0])
    hi = min(t - s_lo, weight.support[1])
    extra = list(weight.breaks) + _coefficient_tau_breaks(kernel, t)
    nodes, wts = tau_rule(lo, hi, trule, extra, grade_at_zero=trule.graded)
    out = np.zeros(xf.shape[0])
    if nodes.size == 0:
        return out.reshape(shape)
    R = chi2_radius(kernel.N)
    wts = wts * weight(nodes)
    for tau, w in zip(nodes, wts):
        if w == 0:
            continue
        out += w * _inner_pointwise(kernel, src, xf, t, tau, ell, srule, R)
    return out.reshape(shape)


def pointwise_initial(kernel, g, x, t, s0=0.0, ell=(), srule=None):
    """int D^ell Gamma(x, t; y, s0) g(y) dy at points x (..., N)."""
    srule = srule or SpaceRule()
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    xf = x.reshape(-1, kernel.N)
    if t <= s0:
        if ell:
            raise ValueError("derivatives of the datum at the initial time are not defined here")
        return g(xf).reshape(shape)
    src = Source(lambda y, s: g(y), np.append(g.lower, s0), np.append(g.upper, s0), True, g.kinks)
    return _inner_pointwise(kernel, src, xf, t, t - s0, tuple(ell), srule, chi2_radius(kernel.N)).reshape(shape)


# -------------------------------------------------------------- spectral
@dataclass
class SpectralGrid:
    """Periodic x-grid that contains an output box with the same spacing."""

    lower: np.ndarray
    spacing: np.ndarray
    size: tuple
    crop: tuple = field(default=())

    @classmethod
    def around(cls, out_lower, out_upper, out_shape, reach_lower, reach_upper, refine=1):
        """Smallest fast FFT grid covering [reach_lower, reach_upper] aligned with the output nodes.

        With ``refine`` > 1 the FFT spacing is the output spacing divided by ``refine``
        and the output nodes are every ``refine``-th FFT node.
        """
        out_lower = np.asarray(out_lower, float)
        out_upper = np.asarray(out_upper, float)
        refine = int(refine)
        if refine < 1:
            raise ValueError("refine must be a positive integer")
        h = (out_upper - out_lower) / (np.asarray(out_shape) - 1) / refine
        left = np.ceil(np.maximum(out_lower - np.asarray(reach_lower), 0) / h).astype(int)
        right = np.ceil(np.maximum(np.asarray(reach_upper) - out_upper, 0) / h).astype(int)
        size, crop = [], []
        for k, n in enumerate(out_shape):
            inner = (n - 1) * refine + 1
            total = sfft.next_fast_len(int(inner + left[k] + right[k]), real=True)
            extra = total - (inner + left[k] + right[k])
            lk = left[k] + extra // 2
            size.append(total)
            crop.append(slice(lk, lk + inner, refine))
        lower = out_lower - np.array([c.start for c in crop]) * h
        return cls(lower, h, tuple(size), tuple(crop))

    def nodes(self):
        axes = [self.lower[k] + self.spacing[k] * np.arange(n) for k, n in enumerate(self.size)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def wavenumbers(self):
        ks = [2 * np.pi * sfft.fftfreq(n, d=h) for n, h in zip(self.size[:-1], self.spacing[:-1])]
        ks.append(2 * np.pi * sfft.rfftfreq(self.size[-1], d=self.spacing[-1]))
        K = np.meshgrid(*ks, indexing="ij")
        return np.stack(K, axis=-1)

    def nyquist_mask(self):
        """True on frequencies where an odd derivative must be dropped."""
        masks = []
        for k, n in enumerate(self.size):
            m = np.zeros(n // 2 + 1 if k == len(self.size) - 1 else n, dtype=bool)
            if n % 2 == 0:
                m[n // 2] = True
            masks.append(m)
        grids = np.meshgrid(*masks, indexing="ij")
        return grids


def _reach(kernel, src_lower, src_upper, taus, cov_diag_max):
    """Box containing E(tau) supp f for the taus given, widened by the Gaussian spread."""
    lo = np.full(kernel.N, np.inf)
    hi = np.full(kernel.N, -np.inf)
    for tau in taus:
        E = kernel.group.E(tau)
        lo = np.minimum(lo, np.minimum(E * src_lower, E * src_upper).sum(axis=1))
        hi = np.maximum(hi, np.maximum(E * src_lower, E * src_upper).sum(axis=1))
    spread = 7.5 * np.sqrt(2.0 * cov_diag_max)
    return lo - spread, hi + spread


def _multiplier(kernel, KK, t, tau, ell, K, nyq):
    """(i k)^ell exp(-k^T C k) with the products k_a k_b precomputed in ``KK``."""
    hat = kernel.scaled_tau(t, tau)[0]
    d = tau ** (0.5 * kernel.exponents)
    cov = hat * d[:, None] * d[None, :]
    N = kernel.N
    quad = np.zeros(KK[0][0].shape)
    for a in range(N):
        quad += cov[a, a] * KK[a][a]
        for b in range(a + 1, N):
            quad += 2.0 * cov[a, b] * KK[a][b]
    m = np.exp(-quad)
    if len(ell) == 1:
        i = ell[0]
        m = m * (1j * K[..., i]) * ~nyq[i]
    elif len(ell) == 2:
        i, j = ell
        m = m * (-KK[min(i, j)][max(i, j)])
        if i != j:
            m = m * ~nyq[i] * ~nyq[j]
    return m


class SpectralEngine:
    """Evaluate potentials on the x-nodes of an output grid at a list of output times.

    Sources are sampled on the FFT grid, whose spacing is the output spacing over
    ``refine``; coarse output grids need ``refine`` > 1 to resolve the source.
    """

    def __init__(self, kernel, out_lower, out_upper, out_shape, src_lower, src_upper, t_max,
                 t_min=0.0, refine=1):
        self.kernel = kernel
        self.out_lower = np.asarray(out_lower, float)
        self.out_upper = np.asarray(out_upper, float)
        self.out_shape = tuple(int(n) for n in out_shape)
        if len(self.out_shape) != kernel.N:
            raise ShapeMismatch("output x-grid must have N axes")
        span = max(float(t_max) - float(t_min), 1e-12)
        taus = np.linspace(0.0, span, 33)
        cmax = np.max([np.diag(kernel.covariance(t_min + span, t_min + span - tau).C) for tau in taus[1:]], axis=0)
        rl, ru = _reach(kernel, np.asarray(src_lower, float)[:kernel.N],
                        np.asarray(src_upper, float)[:kernel.N], taus, cmax)
        rl = np.minimum(rl, self.out_lower - 7.5 * np.sqrt(2.0 * cmax))
        ru = np.maximum(ru, self.out_upper + 7.5 * np.sqrt(2.0 * cmax))
        self.grid = SpectralGrid.around(self.out_lower, self.out_upper, self.out_shape, rl, ru, refine)
        self.Z = self.grid.nodes()
        self.K = self.grid.wavenumbers()
        self.nyq = self.grid.nyquist_mask()
        self.KK = [[self.K[..., a] * self.K[..., b] if b >= a else None for b in range(kernel.N)]
                   for a in range(kernel.N)]

    def _sheared(self, f, tau, s):
        """f(E(-tau) z, s) on the periodic grid, evaluated only where E(tau) supp f can reach."""
        N = self.kernel.N
        E = self.kernel.group.E(tau)
        lo = np.minimum(E * f.lower[:N], E * f.upper[:N]).sum(axis=1)
        hi = np.maximum(E * f.lower[:N], E * f.upper[:N]).sum(axis=1)
        h = self.grid.spacing
        i0 = np.clip(np.floor((lo - self.grid.lower) / h).astype(int) - 1, 0, None)
        i1 = np.minimum(np.ceil((hi - self.grid.lower) / h).astype(int) + 2, self.grid.size)
        out = np.zeros(self.grid.size)
        if np.any(i1 <= i0):
            return out
        block = tuple(slice(a, b) for a, b in zip(i0, i1))
        Y = self.Z[block] @ self.kernel.group.E(-tau).T
        out[block] = f(Y, s)
        return out

    def potential(self, src, times, ell=(), weight=None, trule=None, s_floor=-np.inf):
        """Array of shape out_shape + (len(times),)."""
        return self.potential_multi(src, times, ell, [weight or Weight()], trule, s_floor)[0]

    def potential_multi(self, src, times, ell=(), weights=(), trule=None, s_floor=-np.inf):
        """One tau-sweep shared by several time weights; one array per weight.

        The tau-rule breaks at every weight's nonsmooth points, so each weight is
        integrated exactly as it would be alone while the sheared-source FFTs are
        computed once.
        """
        trule = trule or TimeRule()
        weights = list(weights)
        outs = [np.zeros(self.out_shape + (len(times),)) for _ in weights]
        w_lo = min(w.support[0] for w in weights)
        w_hi = max(w.support[1] for w in weights)
        breaks = [b for w in weights for b in w.breaks] + [w.support[0] for w in weights if w.support[0] > 0]
        for k, t in enumerate(times):
            s_lo = max(float(src.lower[-1]), s_floor)
            lo = max(0.0, t - float(src.upper[-1]), w_lo)
            hi = min(t - s_lo, w_hi)
            extra = breaks + _coefficient_tau_breaks(self.kernel, t)
            nodes, wts = tau_rule(lo, hi, trule, extra)
            if nodes.size == 0:
                continue
            wmat = np.array([wts * w(nodes) * ((nodes >= w.support[0]) & (nodes <= w.support[1]))
                             for w in weights])
            accs = [0.0] * len(weights)
            for m, tau in enumerate(nodes):
                col = wmat[:, m]
                if not np.any(col):
                    continue
                spec = sfft.rfftn(self._sheared(src, tau, t - tau))
                spec = spec * _multiplier(self.kernel, self.KK, t, tau, ell, self.K, self.nyq)
                for n, c in enumerate(col):
                    if c != 0:
                        accs[n] = accs[n] + c * spec
            for n, acc in enumerate(accs):
                if not np.isscalar(acc):
                    outs[n][..., k] = sfft.irfftn(acc, s=self.grid.size)[self.grid.crop]
        return outs

    def initial(self, g, times, s0=0.0, ell=()):
        out = np.zeros(self.out_shape + (len(times),))
        for k, t in enumerate(times):
            if t <= s0:
                if ell:
                    raise ValueError("derivatives of the datum at the initial time are not defined here")
                vals = g(self.Z)
                out[..., k] = vals[self.grid.crop]
                continue
            tau = t - s0
            vals = g(self.Z @ self.kernel.group.E(-tau).T)
            spec = sfft.rfftn(vals) * _multiplier(self.kernel, self.KK, t, tau, ell, self.K, self.nyq)
            out[..., k] = sfft.irfftn(spec, s=self.grid.size)[self.grid.crop]
        return out


def grid_times(grid):
    return grid.axes()[-1]


def spectral_on_grid(kernel, src, grid_like, ell=(), weight=None, trule=None, s_floor=-np.inf,
                     refine=1):
    """Potential of ``src`` on the nodes of a (space-time) grid, returned as a GridFunction."""
    times = grid_times(grid_like)
    eng = SpectralEngine(kernel, grid_like.lower[:-1], grid_like.upper[:-1], grid_like.shape[:-1],
                         src.lower, src.upper, times.max(), min(times.min(), float(src.lower[-1])),
                         refine)
    vals = eng.potential(src, times, ell, weight, trule, s_floor)
    return GridFunction(grid_like.lower, grid_like.upper, vals, True)
