"""Explicit fundamental solution of the model operator with t-dependent coefficients.

For coefficients ``A_0(t)`` acting on the first ``q`` variables the kernel is

    Gamma(x,t;y,s) = (4 pi)^{-N/2} det C(t,s)^{-1/2} exp(-<C^{-1} w, w> / 4) 1_{t>s}

with ``w = x - E(t-s) y`` and the covariance

    C(t,s) = int_s^t E(t-u) diag(A_0(u), 0) E(t-u)^T du.

All linear algebra is done on the scaled covariance
``Chat = D_0(tau^{-1/2}) C D_0(tau^{-1/2})`` (tau = t - s), which stays well
conditioned as ``tau -> 0`` and is what gets Cholesky-factored.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.stats import chi2

from .errors import (EllipticityViolated, NotAfterPole, QuadratureNotConverged,
                     ShapeMismatch, SingularCovariance)
from .geometry import Point, as_point
from .quadrature import adaptive_gauss_legendre, composite_rule, merge_breaks, tensor_rule

ELLIPTICITY_TOL = 1e-12
TAIL_MASS = 1e-10


# ----------------------------------------------------------------- coefficients
def _sym_matrix(a, q):
    a = np.array(a, dtype=float, ndmin=2)
    if a.shape != (q, q):
        raise ShapeMismatch(f"coefficient matrix has shape {a.shape}, expected {(q, q)}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-14 * max(1.0, np.abs(a).max())):
        raise EllipticityViolated("coefficient matrix is not symmetric")
    return 0.5 * (a + a.T)


def _ellipticity_range(mats):
    eig = np.linalg.eigvalsh(mats)
    return float(eig.min()), float(eig.max())


class CoefficientPath:
    """Time-dependent diffusion matrix A_0(t) (q x q, symmetric, uniformly elliptic).

    Use the constructors :meth:`constant_alpha`, :meth:`constant_matrix`,
    :meth:`piecewise_constant` and :meth:`closed_form`.
    """

    def __init__(self, kind, q, nu, matrices=None, breakpoints=None, func=None, source=None):
        self.kind = kind
        self.q = int(q)
        self.nu = float(nu)
        self.breakpoints = np.asarray([] if breakpoints is None else breakpoints, dtype=float)
        self.matrices = None if matrices is None else np.asarray(matrices, dtype=float)
        self._func = func
        self.source = source
        if not 0 < self.nu <= 1:
            raise EllipticityViolated("nu must lie in (0, 1]")
        if self.matrices is not None:
            self._check(self.matrices)

    # constructors
    @classmethod
    def constant_alpha(cls, alpha, q, nu=None):
        A = float(alpha) * np.eye(q)
        if nu is None:
            nu = min(alpha, 1.0 / alpha)
        return cls("constant_alpha", q, nu, matrices=A[None], source={"alpha": float(alpha)})

    @classmethod
    def constant_matrix(cls, A, nu=None):
        A = np.array(A, dtype=float, ndmin=2)
        A = _sym_matrix(A, A.shape[0])
        if nu is None:
            lo, hi = _ellipticity_range(A)
            nu = min(lo, 1.0 / hi)
        return cls("constant_matrix", A.shape[0], nu, matrices=A[None])

    @classmethod
    def piecewise_constant(cls, breakpoints, matrices, nu=None):
        """``len(matrices) == len(breakpoints) + 1``; piece k holds on
        [breakpoints[k-1], breakpoints[k])."""
        bp = np.asarray(breakpoints, dtype=float).ravel()
        if np.any(np.diff(bp) <= 0):
            raise ShapeMismatch("breakpoints must be strictly increasing")
        mats = [np.array(m, dtype=float, ndmin=2) for m in matrices]
        if len(mats) != bp.size + 1:
            raise ShapeMismatch("need one more matrix than breakpoints")
        q = mats[0].shape[0]
        mats = np.array([_sym_matrix(m, q) for m in mats])
        if nu is None:
            lo, hi = _ellipticity_range(mats)
            nu = min(lo, 1.0 / hi)
        return cls("piecewise_constant", q, nu, matrices=mats, breakpoints=bp)

    @classmethod
    def closed_form(cls, func, q, nu):
        """``func(t)`` maps an array of times to an array of shape ``t.shape + (q, q)``."""
        return cls("closed_form", q, nu, func=func)

    def _check(self, mats):
        lo, hi = _ellipticity_range(mats)
        if lo < self.nu * (1 - ELLIPTICITY_TOL) or hi > (1 + ELLIPTICITY_TOL) / self.nu:
            raise EllipticityViolated(
                f"eigenvalues in [{lo:.3g}, {hi:.3g}] leave [nu, 1/nu] with nu={self.nu:.3g}")

    @property
    def is_constant(self):
        return self.kind in ("constant_alpha", "constant_matrix")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "closed_form":
            A = np.asarray(self._func(t), dtype=float)
            A = np.broadcast_to(A, t.shape + (self.q, self.q))
            self._check(A.reshape(-1, self.q, self.q))
            return A
        idx = np.searchsorted(self.breakpoints, t, side="right")
        return self.matrices[idx]

    def pieces(self, s, t):
        """Constant pieces (a, b, A) covering [s, t]."""
        if self.kind == "closed_form":
            raise TypeError("closed-form paths have no constant pieces")
        cuts = self.breakpoints[(self.breakpoints > s) & (self.breakpoints < t)]
        edges = np.concatenate([[s], cuts, [t]])
        mids = 0.5 * (edges[:-1] + edges[1:])
        return [(a, b, self(m)) for a, b, m in zip(edges[:-1], edges[1:], mids)]

    def to_dict(self):
        out = {"kind": self.kind, "q": self.q, "nu": self.nu}
        if self.kind == "constant_alpha":
            out["alpha"] = self.source["alpha"]
        elif self.kind == "constant_matrix":
            out["matrix"] = self.matrices[0].tolist()
        elif self.kind == "piecewise_constant":
            out["breakpoints"] = self.breakpoints.tolist()
            out["matrices"] = self.matrices.tolist()
        elif self.source is not None:
            out["expressions"] = self.source
        return out


# ------------------------------------------------------------------ covariance
@dataclass
class Covariance:
    C: np.ndarray
    t: float
    s: float
    method: str
    scaled: np.ndarray = None
    scaled_inv: np.ndarray = None
    scaled_logdet: float = None

    @property
    def tau(self):
        return self.t - self.s


@dataclass
class KernelEval:
    value: np.ndarray
    grad_x: np.ndarray
    hess_x: np.ndarray
    covariance_used: Covariance = None


class FundamentalSolution:
    """Gamma for a validated :class:`~kfp.geometry.Group` and a coefficient path."""

    def __init__(self, group, path):
        if path.q != group.q:
            raise ShapeMismatch(f"coefficient path has q={path.q}, structure has q={group.q}")
        self.group = group
        self.path = path
        self.N = group.N
        self.q = group.q
        self.exponents = group.exponents
        self.Q = group.Q
        self.block = ((self.exponents - 1) // 2).astype(int)
        self._P = group._P
        self._cache = {}
        self._hat1 = None
        if path.is_constant:
            self._hat1 = self._factor(self._scaled_exact([(0.0, 1.0, path.matrices[0])], 0.0, 1.0))

    def __repr__(self):
        return f"FundamentalSolution({self.group!r}, kind={self.path.kind})"

    # ---------------------------------------------------------- scaled forms
    def _scaled_exact(self, pieces, s, t):
        """Chat from constant pieces, integrating the monomials u^{p+r} exactly.

        Entry (i, j) of P_p diag(A,0) P_r^T vanishes unless i is in block p and
        j in block r, so after scaling by D_0(tau^{-1/2}) each block only picks
        up the integral of (u/tau)^{p+r} d(u/tau).
        """
        tau = t - s
        nb = len(self._P)
        a = np.array([pc[0] for pc in pieces])
        b = np.array([pc[1] for pc in pieces])
        mats = np.array([pc[2] for pc in pieces])
        v0, v1 = (t - b) / tau, (t - a) / tau
        n = np.arange(2 * nb - 1)[:, None]
        weights = (v1 ** (n + 1) - v0 ** (n + 1)) / (n + 1)       # (degree, piece)
        Abar = np.zeros((2 * nb - 1, self.N, self.N))
        Abar[:, : self.q, : self.q] = np.einsum("dk,kij->dij", weights, mats)
        out = np.zeros((self.N, self.N))
        for p in range(nb):
            for r in range(nb):
                out += self._P[p] @ Abar[p + r] @ self._P[r].T
        return 0.5 * (out + out.T)

    def _scaled_quadrature(self, s, t, tol=1e-12):
        tau = t - s
        d = tau ** (-0.5 * self.exponents)
        q = self.q

        def integrand(v):
            E = self.group.E(tau * v)
            A = self.path(t - tau * v)
            EA = E[..., :, :q] @ A
            M = EA @ np.swapaxes(E[..., :, :q], -1, -2)
            return tau * M * d[:, None] * d[None, :]

        edges = [0.0, 1.0]
        if self.path.kind != "closed_form":
            edges = sorted(set([0.0, 1.0] + [(t - b) / tau for b in self.path.breakpoints if s < b < t]))
        out = sum(adaptive_gauss_legendre(integrand, a, b, tol=tol) for a, b in zip(edges[:-1], edges[1:]))
        return 0.5 * (out + out.T)

    def _factor(self, hat):
        try:
            L = np.linalg.cholesky(hat)
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance("scaled covariance is not positive definite") from exc
        Linv = np.linalg.inv(L)
        inv = Linv.T @ Linv
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        lam_min = float(np.linalg.eigvalsh(hat)[0])
        if not lam_min > 0:
            raise SingularCovariance("scaled covariance is not positive definite")
        return hat, inv, logdet, L, lam_min

    def scaled(self, t, s, method=None):
        """(Chat, Chat^{-1}, log det Chat, chol(Chat)) for t > s."""
        t, s = float(t), float(s)
        if not t > s:
            raise NotAfterPole(f"need t > s, got t={t}, s={s}")
        if method is None and self._hat1 is not None:
            out = self._hat1
        else:
            key = (t, s, method)
            out = self._cache.get(key)
            if out is None:
                if method is None:
                    method = "quadrature" if self.path.kind == "closed_form" else "exact_piecewise"
                if method == "homogeneous_closed_form":
                    if self._hat1 is None:
                        raise ValueError("homogeneous form needs constant coefficients")
                    out = self._hat1
                elif method == "exact_piecewise":
                    out = self._factor(self._scaled_exact(self.path.pieces(s, t), s, t))
                elif method == "quadrature":
                    out = self._factor(self._scaled_quadrature(s, t))
                else:
                    raise ValueError(f"unknown covariance method {method!r}")
                if len(self._cache) > 4096:
                    self._cache.clear()
                self._cache[key] = out
        # smallest eigenvalue of C is at least tau^{max q} * lambda_min(Chat)
        if (t - s) ** self.exponents.max() * out[4] < 1e-300:
            raise SingularCovariance(f"covariance underflows at t - s = {t - s:.3g}")
        return out[:4]

    def scaled_tau(self, t, tau):
        """:meth:`scaled` for the pair (t, t - tau) without forming t - tau when avoidable.

        Constant coefficients only see tau.  Otherwise, once tau is below the
        resolution of t, the limit tau -> 0 is used: the constant-coefficient
        form with the coefficients in force just before t.
        """
        tau = float(tau)
        if not tau > 0:
            raise NotAfterPole(f"need tau > 0, got {tau}")
        if self._hat1 is not None:
            return self._hat1[:4]
        s = float(t) - tau
        if s < float(t) and (float(t) - s) > 0.5 * tau:
            return self.scaled(t, s)
        key = ("limit", float(t))
        out = self._cache.get(key)
        if out is None:
            out = self._factor(self._scaled_exact([(0.0, 1.0, self.path(np.nextafter(float(t), -np.inf)))], 0.0, 1.0))
            self._cache[key] = out
        return out[:4]

    def covariance(self, t, s, method=None):
        """Covariance C(t, s) with its scaled factorization."""
        if method is None:
            if self.path.is_constant:
                method = "homogeneous_closed_form"
            elif self.path.kind == "closed_form":
                method = "quadrature"
            else:
                method = "exact_piecewise"
        hat, inv, logdet, _ = self.scaled(t, s, method)
        d = (float(t) - float(s)) ** (0.5 * self.exponents)
        C = hat * d[:, None] * d[None, :]
        return Covariance(C=C, t=float(t), s=float(s), method=method,
                          scaled=hat, scaled_inv=inv, scaled_logdet=logdet)

    # --------------------------------------------------------------- kernel
    def _core(self, x, t, y, s):
        """Shared pieces of every evaluation: value, C^{-1} w, C^{-1}."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        tau = t - s
        pos = tau > 0
        tau_safe = np.where(pos, tau, 1.0)
        w = x - self.group.apply_E(tau_safe, y)
        shape = np.broadcast_shapes(w.shape[:-1], tau.shape)
        w = np.broadcast_to(w, shape + (self.N,))
        tau_safe = np.broadcast_to(tau_safe, shape)
        pos = np.broadcast_to(pos, shape)
        dinv = tau_safe[..., None] ** (-0.5 * self.exponents)
        if self._hat1 is not None:
            inv_hat, logdet = self._hat1[1], self._hat1[2]
        elif t.ndim == 0 and s.ndim == 0:
            inv_hat, logdet = (self.scaled(t, s)[1:3] if tau > 0 else (np.eye(self.N), 0.0))
        else:
            inv_hat, logdet = self._params_pairs(np.broadcast_to(t, shape), np.broadcast_to(s, shape), pos)
        what = w * dinv
        u = np.einsum("...ij,...j->...i", inv_hat, what)
        quad = np.einsum("...i,...i->...", u, what)
        logpref = (-0.5 * self.N * np.log(4 * np.pi) - 0.5 * self.Q * np.log(tau_safe)
                   - 0.5 * logdet)
        val = np.where(pos, np.exp(logpref - 0.25 * quad), 0.0)
        cinv_w = u * dinv                      # C^{-1} w
        return val, cinv_w, inv_hat, dinv, pos

    def _params_pairs(self, t, s, pos):
        flat_t, flat_s = t.ravel(), s.ravel()
        pairs = np.stack([flat_t, flat_s], axis=1)
        uniq, back = np.unique(pairs, axis=0, return_inverse=True)
        back = back.ravel()
        invs = np.empty((uniq.shape[0], self.N, self.N))
        lds = np.empty(uniq.shape[0])
        for k, (tk, sk) in enumerate(uniq):
            if tk > sk:
                _, invs[k], lds[k], _ = self.scaled(tk, sk)
            else:
                invs[k], lds[k] = np.eye(self.N), 0.0
        return (invs[back].reshape(t.shape + (self.N, self.N)), lds[back].reshape(t.shape))

    def __call__(self, x, t, y, s):
        """Gamma(x, t; y, s), broadcasting over leading axes."""
        return self._core(x, t, y, s)[0]

    def derivatives(self, x, t, y, s, order=2):
        """(Gamma, grad_x Gamma, Hess_x Gamma) with full N-dimensional derivatives."""
        val, cw, inv_hat, dinv, _ = self._core(x, t, y, s)
        g = -0.5 * cw
        grad = g * val[..., None]
        if order < 2:
            return val, grad
        cinv = inv_hat * dinv[..., :, None] * dinv[..., None, :]
        hess = (g[..., :, None] * g[..., None, :] - 0.5 * cinv) * val[..., None, None]
        return val, grad, hess

    def derivative(self, x, t, y, s, index):
        """Mixed x-derivative d_{index[0]} d_{index[1]} ... Gamma, weighted order <= 4.

        Uses the Gaussian pairing rule D(a, rest) = g_a D(rest) + sum_b H_ab D(rest - b)
        with g = -C^{-1} w / 2 and H = -C^{-1} / 2.
        """
        index = tuple(int(i) for i in index)
        if sum(self.exponents[i] for i in index) > 4:
            raise ValueError("derivatives of weighted order > 4 are not supported")
        val, cw, inv_hat, dinv, _ = self._core(x, t, y, s)
        g = -0.5 * cw
        H = -0.5 * inv_hat * dinv[..., :, None] * dinv[..., None, :]

        def poly(idx):
            if not idx:
                return np.ones(val.shape)
            a, rest = idx[0], idx[1:]
            out = g[..., a] * poly(rest)
            for k, b in enumerate(rest):
                out = out + H[..., a, b] * poly(rest[:k] + rest[k + 1:])
            return out

        return poly(index) * val

    def gamma(self, xi, eta):
        """KernelEval at a single pair of points."""
        x, t = as_point(xi)
        y, s = as_point(eta)
        val, grad, hess = self.derivatives(x, t, y, s)
        cov = self.covariance(float(t), float(s)) if np.ndim(t) == 0 and t > s else None
        q = self.q
        return KernelEval(value=val, grad_x=grad, hess_x=hess[..., :q, :q], covariance_used=cov)


# ------------------------------------------------------- integral identities
def chi2_radius(n, mass=TAIL_MASS):
    return float(np.sqrt(chi2.isf(mass, n)))


def gaussian_rule(kernel, x, t, s, n=48):
    """Quadrature nodes y and weights for integrals of Gamma(x,t;.,s) times smooth data.

    The rule lives on the cube [-R, R]^N in whitened coordinates z with
    y = E(s-t)(x - L z), 2C = L L^T, and R chosen so that the Gaussian mass
    outside the cube is below 1e-10.  The Jacobian det L is folded into the
    weights.  The nodes only depend on C; the integrand is evaluated
    independently.
    """
    tau = t - s
    _, _, logdet, Lhat = kernel.scaled(t, s)
    L = np.sqrt(2.0) * Lhat * (tau ** (0.5 * kernel.exponents))[:, None]
    R = chi2_radius(kernel.N)
    z, w = tensor_rule(-R * np.ones(kernel.N), R * np.ones(kernel.N), n)
    y = kernel.group.apply_E(-tau, np.asarray(x, dtype=float) - z @ L.T)
    jac = np.exp(0.5 * kernel.N * np.log(2.0) + 0.5 * logdet + 0.5 * kernel.Q * np.log(tau))
    return y, w * jac


def gamma_derivative_integrals(kernel, x, t, s, ell=(), n=48):
    """int_{R^N} D_x^ell Gamma(x, t; y, s) dy by quadrature (ell = () gives the mass)."""
    if not t > s:
        raise NotAfterPole(f"need t > s, got t={t}, s={s}")
    y, w = gaussian_rule(kernel, x, t, s, n)
    vals = kernel.derivative(np.asarray(x, dtype=float), t, y, s, ell)
    return float(w @ vals)


def normalization_check(kernel, n_samples=50, seed=0, tau_range=(1e-3, 10.0), orders=None, n=48):
    """Mass and vanishing-derivative integrals at random (x, t, s).

    Returns the worst |mass - 1| and the worst |int D^ell Gamma| * tau^{w(ell)/2}
    (made scale free by the natural size of D^ell Gamma).
    """
    rng = np.random.default_rng(seed)
    N = kernel.N
    if orders is None:
        orders = [(i,) for i in range(N)] + [(i, j) for i in range(kernel.q) for j in range(i, kernel.q)]
        orders = [o for o in orders if sum(kernel.exponents[i] for i in o) <= 4]
    worst_mass, worst_deriv = 0.0, 0.0
    for _ in range(n_samples):
        x = rng.uniform(-2, 2, N)
        s = rng.uniform(-1, 1)
        tau = float(np.exp(rng.uniform(np.log(tau_range[0]), np.log(tau_range[1]))))
        t = s + tau
        y, w = gaussian_rule(kernel, x, t, s, n)
        worst_mass = max(worst_mass, abs(float(w @ kernel(x, t, y, s)) - 1.0))
        for ell in orders:
            scale = tau ** (0.5 * sum(kernel.exponents[i] for i in ell))
            val = float(w @ kernel.derivative(x, t, y, s, ell)) * scale
            worst_deriv = max(worst_deriv, abs(val))
    return {"samples": n_samples, "mass_error": worst_mass, "derivative_integral": worst_deriv}


# ----------------------------------------------------------------- sampling
def _bulk_pairs(kernel, rng, n, tau_range=(1e-2, 4.0), box=2.0, spread=2.5, avoid=()):
    """Random pairs (x,t), (y,s) with t > s and x in the Gaussian bulk of y."""
    N = kernel.N
    y = rng.uniform(-box, box, (n, N))
    s = rng.uniform(-box, box, n)
    tau = np.exp(rng.uniform(np.log(tau_range[0]), np.log(tau_range[1]), n))
    for b in avoid:
        # keep (s, t) away from coefficient jumps
        bad = (s < b + 1e-3) & (s + tau > b - 1e-3)
        s[bad] = b + 1e-2 + rng.uniform(0, 1, bad.sum())
    t = s + tau
    x = np.empty((n, N))
    for k in range(n):
        _, _, _, Lhat = kernel.scaled(t[k], s[k])
        z = rng.normal(size=N) * spread / np.sqrt(N)
        w = np.sqrt(2.0) * (Lhat @ z) * tau[k] ** (0.5 * kernel.exponents)
        x[k] = w + kernel.group.apply_E(tau[k], y[k])
    return x, t, y, s


def _natural_steps(kernel, x, t, y, s, h):
    """Finite-difference steps measured in the Gaussian's own metric.

    Along x_i the step is h times the conditional standard deviation
    (C^{-1})_{ii}^{-1/2}.  In t it is h times the smaller of tau and the time
    over which the transport w -> w + B E(tau) y dt moves by one unit of the
    C^{-1} metric.
    """
    tau = t - s
    n = tau.size
    cinv = np.empty((n, kernel.N, kernel.N))
    for k in range(n):
        _, inv_hat, _, _ = kernel.scaled(t[k], s[k])
        d = tau[k] ** (-0.5 * kernel.exponents)
        cinv[k] = inv_hat * d[:, None] * d[None, :]
    hx = h / np.sqrt(np.einsum("nii->ni", cinv))
    v = kernel.group.apply_E(tau, y) @ kernel.group.B.T
    speed = np.sqrt(np.einsum("ni,nij,nj->n", v, cinv, v))
    ht = h * np.minimum(tau, 1.0 / np.maximum(speed, 1e-300))
    return hx, ht


def hessian_fd_check(kernel, n_points=1000, seed=0):
    """Analytic Hessian against differences of the analytic gradient.

    A fourth-order central stencil is used.  Its step balances truncation
    against rounding in w = x - E(tau) y, whose relative size is eps times
    (|x_i| + |(E y)_i|) over the conditional width.  Returns the worst
    relative Frobenius error.
    """
    rng = np.random.default_rng(seed)
    x, t, y, s = _bulk_pairs(kernel, rng, n_points, avoid=kernel.path.breakpoints)
    _, _, H = kernel.derivatives(x, t, y, s)
    width, _ = _natural_steps(kernel, x, t, y, s, 1.0)
    Ey = kernel.group.apply_E(t - s, y)
    eps = np.finfo(float).eps
    noise = eps * (1.0 + (np.abs(x) + np.abs(Ey)) / width)
    h = width * noise ** 0.2
    Hfd = np.empty_like(H)
    for i in range(kernel.N):
        e = np.zeros(kernel.N)
        e[i] = 1.0
        hi = (x[:, i] + h[:, i]) - x[:, i]  # exactly representable step
        hi = hi[:, None]
        grads = [kernel.derivatives(x + c * hi * e, t, y, s, order=1)[1] for c in (2, 1, -1, -2)]
        Hfd[:, :, i] = (-grads[0] + 8 * grads[1] - 8 * grads[2] + grads[3]) / (12 * hi)
    Hfd = 0.5 * (Hfd + np.swapaxes(Hfd, 1, 2))
    err = np.linalg.norm(H - Hfd, axis=(1, 2)) / np.linalg.norm(H, axis=(1, 2))
    return {"samples": n_points, "max_relative_error": float(err.max())}


def pde_residual_check(kernel, n_points=200, seed=0, h=1e-4):
    """Finite-difference residual of sum a_ij d_ij Gamma + <Bx, grad Gamma> - d_t Gamma.

    All derivatives are central differences of Gamma values with steps from
    :func:`_natural_steps`.  The residual is divided by the sum of the absolute
    values of the three terms.  Pairs straddling a coefficient jump are avoided.
    """
    rng = np.random.default_rng(seed)
    x, t, y, s = _bulk_pairs(kernel, rng, n_points, avoid=kernel.path.breakpoints)
    hx, ht = _natural_steps(kernel, x, t, y, s, h)
    G = kernel(x, t, y, s)
    N, q = kernel.N, kernel.q
    grad = np.empty((n_points, N))
    second = np.zeros(n_points)
    A = kernel.path(t)
    for i in range(N):
        e = np.zeros(N)
        e[i] = 1.0
        gp = kernel(x + hx[:, i:i + 1] * e, t, y, s)
        gm = kernel(x - hx[:, i:i + 1] * e, t, y, s)
        grad[:, i] = (gp - gm) / (2 * hx[:, i])
        if i < q:
            second += A[:, i, i] * (gp - 2 * G + gm) / hx[:, i] ** 2
    for i in range(q):
        for j in range(q):
            if i == j:
                continue
            ei = np.zeros(N)
            ej = np.zeros(N)
            ei[i] = 1.0
            ej[j] = 1.0
            hi, hj = hx[:, i:i + 1], hx[:, j:j + 1]
            mixed = (kernel(x + hi * ei + hj * ej, t, y, s) - kernel(x + hi * ei - hj * ej, t, y, s)
                     - kernel(x - hi * ei + hj * ej, t, y, s) + kernel(x - hi * ei - hj * ej, t, y, s))
            second += A[:, i, j] * mixed / (4 * hx[:, i] * hx[:, j])
    drift = np.einsum("ni,ni->n", x @ kernel.group.B.T, grad)
    dt = (kernel(x, t + ht, y, s) - kernel(x, t - ht, y, s)) / (2 * ht)
    resid = np.abs(second + drift - dt) / (np.abs(second) + np.abs(drift) + np.abs(dt))
    return {"samples": n_points, "max_relative_residual": float(resid.max())}


def convolution_identity_check(kernel, n_points=1000, seed=0):
    """Gamma(x,t;y,s) against Gamma((y,s)^{-1} o (x,t); 0, 0) (constant coefficients)."""
    rng = np.random.default_rng(seed)
    x, t, y, s = _bulk_pairs(kernel, rng, n_points)
    rel = kernel.group.relative((x, t), (y, s))
    a = kernel(x, t, y, s)
    b = kernel(rel.x, rel.t, np.zeros(kernel.N), 0.0)
    return {"samples": n_points, "max_relative_error": float(np.max(np.abs(a - b) / np.abs(a)))}


def covariance_homogeneity_check(kernel, taus=(1e-2, 1.0, 10.0)):
    """C(tau) computed exactly against D_0(sqrt tau) C(1) D_0(sqrt tau)."""
    C1 = kernel.covariance(1.0, 0.0, method="exact_piecewise").C
    worst = 0.0
    for tau in taus:
        C = kernel.covariance(tau, 0.0, method="exact_piecewise").C
        d = tau ** (0.5 * kernel.exponents)
        ref = C1 * d[:, None] * d[None, :]
        worst = max(worst, float(np.max(np.abs(C - ref) / np.abs(ref).clip(1e-300))))
    return {"samples": len(taus), "max_relative_error": worst}


# --------------------------------------------------------- empirical bounds
def _offset_cloud(kernel, rng, n):
    """Base points eta and unit-scale offsets zeta with positive time part."""
    N = kernel.N
    eta = Point(rng.uniform(-1, 1, (n, N)), rng.uniform(-1, 1, n))
    zeta = Point(rng.uniform(-1, 1, (n, N)) * rng.uniform(0, 1, (n, 1)) ** 2,
                 rng.uniform(1e-3, 1.0, n))
    return eta, zeta


def check_gaussian_bound(kernel, n_samples=4000, seed=0, levels=(1.0, 0.1, 0.01)):
    """sup |d^2_{ij} Gamma| d^{Q+2} over a sample cloud contracted toward the pole.

    At level lam the cloud is xi = eta o D(lam) zeta.  The report lists the sup
    per level; ``stable`` means max/min < 2 and ``diverging`` flags monotone
    growth by more than 2x.
    """
    rng = np.random.default_rng(seed)
    eta, zeta = _offset_cloud(kernel, rng, n_samples)
    g = kernel.group
    q = kernel.q
    sups = []
    for lam in levels:
        xi = g.compose(eta, g.dilate(lam, zeta))
        _, _, H = kernel.derivatives(xi.x, xi.t, eta.x, eta.t)
        d = g.quasidistance(xi, eta)
        c = np.max(np.abs(H[:, :q, :q]), axis=(1, 2)) * d ** (kernel.Q + 2)
        sups.append(float(c.max()))
    sups = np.array(sups)
    diverging = bool(np.all(np.diff(sups) > 0) and sups[-1] > 2 * sups[0])
    return {"levels": list(levels), "sup": sups.tolist(), "constant": float(sups.max()),
            "stable": bool(sups.max() < 2 * sups.min()), "diverging": diverging,
            "samples": n_samples}


def mean_value_triples(kernel, n_samples=4000, seed=0):
    """Random triples (xi1, xi2, eta) with xi2 close to xi1 relative to d(xi1, eta)."""
    rng = np.random.default_rng(seed)
    g = kernel.group
    eta, zeta = _offset_cloud(kernel, rng, n_samples)
    xi1 = g.compose(eta, zeta)
    small = Point(rng.uniform(-1, 1, (n_samples, kernel.N)), rng.uniform(-1, 1, n_samples))
    lam = (10 ** rng.uniform(-3, -0.3, n_samples) * g.quasidistance(xi1, eta)
           / np.maximum(g.homogeneous_norm(small), 1e-12))
    xi2 = g.compose(xi1, g.dilate(lam, small))
    return xi1, xi2, eta


def check_mean_value(kernel, n_samples=4000, seed=0, kappa=None, triples=None):
    """Empirical constant of the mean-value inequality for second derivatives.

    Triples with d(xi1, eta) >= 4 kappa d(xi1, xi2) > 0 are kept; the constant is
    sup |D^2 Gamma(xi1,eta) - D^2 Gamma(xi2,eta)| d(xi1,eta)^{Q+3} / d(xi1,xi2).
    """
    g = kernel.group
    kappa = g.kappa if kappa is None else kappa
    if triples is None:
        triples = mean_value_triples(kernel, n_samples, seed)
    xi1, xi2, eta = (as_point(p) for p in triples)
    d1 = g.quasidistance(xi1, eta)
    d12 = g.quasidistance(xi1, xi2)
    ok = (d1 >= 4 * kappa * d12) & (d12 > 0)
    q = kernel.q
    H1 = kernel.derivatives(xi1.x[ok], xi1.t[ok], eta.x[ok], eta.t[ok])[2][:, :q, :q]
    H2 = kernel.derivatives(xi2.x[ok], xi2.t[ok], eta.x[ok], eta.t[ok])[2][:, :q, :q]
    diff = np.max(np.abs(H1 - H2), axis=(1, 2))
    c = diff * d1[ok] ** (kernel.Q + 3) / d12[ok]
    return {"constant": float(c.max()) if c.size else 0.0, "admissible": int(ok.sum()),
            "rejected": int((~ok).sum()), "kappa": float(kappa)}


# --------------------------------------------------------------- cancellation
@lru_cache(maxsize=16)
def _unit_simplex_rule(m, n=6, ratio=0.2, depth=1e-7):
    """Nodes/weights on {u in R^m_+ : sum u < 1} via collapsed coordinates.

    Each collapsed coordinate uses Gauss-Legendre panels graded geometrically
    toward both ends of [0, 1].
    """
    if m == 0:
        return np.zeros((1, 0)), np.ones(1)
    g = 0.5 * ratio ** np.arange(int(np.ceil(np.log(2 * depth) / np.log(ratio))) + 1)
    breaks = np.unique(np.concatenate([[0.0, 1.0], g, 1.0 - g]))
    x1, w1 = composite_rule(breaks, n)
    grids = np.meshgrid(*([x1] * m), indexing="ij")
    wgrids = np.meshgrid(*([w1] * m), indexing="ij")
    S = np.stack([gr.ravel() for gr in grids], axis=-1)
    W = np.prod(np.stack([gr.ravel() for gr in wgrids], axis=-1), axis=-1)
    u = np.empty_like(S)
    rem = np.ones(S.shape[0])
    for k in range(m):
        u[:, k] = rem * S[:, k]
        W = W * rem
        rem = rem - u[:, k]
    return u, W


def quasi_ball_divergence(field, exponents, radius, k, n=6):
    """int_{||v|| < radius} d_{v_k} field(v) dv for a vector field ``field``.

    The v_k integral is done exactly (boundary values at v_k = +-a with
    a = (radius - sum_{l != k} |v_l|^{1/q_l})^{q_k}); the remaining variables
    use power coordinates u_l = |v_l|^{1/q_l} on a simplex and all sign
    patterns.  ``field`` maps (M, N) points to (M, N) values; the result is the
    length-N vector of integrals of d_k field_l.
    """
    exponents = np.asarray(exponents, dtype=float)
    N = exponents.size
    others = [l for l in range(N) if l != k]
    u, w = _unit_simplex_rule(N - 1, n)
    u = radius * u
    w = w * radius ** (N - 1)
    qo = exponents[others]
    w = w * np.prod(qo * u ** (qo - 1), axis=1)
    a = (radius - u.sum(axis=1)) ** exponents[k]
    signs = np.array(list(product((-1.0, 1.0), repeat=N - 1))).reshape(2 ** (N - 1), N - 1)
    M = u.shape[0]
    v = np.empty((signs.shape[0], 2, M, N))
    v[..., others] = signs[:, None, None, :] * u ** qo
    v[:, 0, :, k] = a
    v[:, 1, :, k] = -a
    vals = field(v.reshape(-1, N)).reshape(signs.shape[0], 2, M, N)
    return np.einsum("m,smn->n", w, vals[:, 0] - vals[:, 1])


def cancellation_inner(kernel, t, s, r, i, j, swapped=False, n=6):
    """Inner integral over {d >= r} of d^2_{x_i x_j} Gamma(x,t;y,s), in y (or in x if swapped).

    Writing the region through the unimodular substitutions w = x - E(t-s) y
    (or v = y - E(s-t) x) it equals minus the integral over the quasi-ball of
    radius r - sqrt(t-s), which is reduced to boundary integrals.  The result
    does not depend on the base point.
    """
    tau = t - s
    rho = r - np.sqrt(tau)
    if rho <= 0:
        return 0.0
    zero = np.zeros(kernel.N)
    if not swapped:
        def grad_w(w):
            return kernel.derivatives(w, t, zero, s, order=1)[1]
        return -float(quasi_ball_divergence(grad_w, kernel.exponents, rho, i, n)[j])
    E = kernel.group.E(tau)
    Eminus = kernel.group.E(-tau)

    def grad_v(v):
        w = -v @ E.T
        return -kernel.derivatives(w, t, zero, s, order=1)[1] @ E
    total = 0.0
    for k in range(kernel.N):
        if Eminus[k, i] == 0:
            continue
        row = quasi_ball_divergence(grad_v, kernel.exponents, rho, k, n)
        total += Eminus[k, i] * float(row @ Eminus[:, j])
    return -total


def cancellation_integrals(kernel, x, t, r, tau, i=0, j=0, tol=1e-8):
    """(I_{r,tau}(x,t), J) for diffusive indices i, j (zero based), tau < t.

    I integrates |inner| over s in (tau, t) with (x, t) as the evaluation
    point.  J uses (x, t) as the pole (y, s) and integrates over the window
    (t, t + (t - tau)) of the same length.  The outer variable is the square
    root of the time gap; only gaps below r^2 contribute.  For constant
    coefficients neither value depends on x or t.
    """
    if not (i < kernel.q and j < kernel.q):
        raise ValueError("indices must address the diffusive block")
    if r <= 0:
        raise ValueError("r must be positive")
    t, tau = float(t), float(tau)
    if not tau < t:
        raise NotAfterPole("need tau < t")
    top = min(float(r), np.sqrt(t - tau))

    def integrate(swapped):
        def f(sig):
            out = np.empty(sig.size)
            for k, sg in enumerate(sig):
                if swapped:
                    val = cancellation_inner(kernel, t + sg * sg, t, r, i, j, swapped=True)
                else:
                    val = cancellation_inner(kernel, t, t - sg * sg, r, i, j)
                out[k] = 2 * sg * abs(val)
            return out
        # coefficient jumps make the integrand kink at the matching gaps
        bps = kernel.path.breakpoints
        gaps = (t - bps) if not swapped else (bps - t)
        edges = merge_breaks(0.0, top, np.sqrt(gaps[gaps > 0]))
        return float(sum(adaptive_gauss_legendre(f, a, b, tol=tol, n=8, max_depth=30)
                         for a, b in zip(edges[:-1], edges[1:])))

    return integrate(False), integrate(True)
