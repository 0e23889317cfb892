"""Gauss-Legendre building blocks shared by the kernel and solver modules."""

from functools import lru_cache

import numpy as np

from .errors import QuadratureNotConverged


@lru_cache(maxsize=64)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n, a=-1.0, b=1.0):
    """Nodes and weights of the ``n``-point Gauss-Legendre rule on [a, b]."""
    x, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def composite_rule(breaks, n):
    """Gauss-Legendre rule with ``n`` nodes on each panel [breaks[k], breaks[k+1]]."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = _leggauss(int(n))
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def graded_breaks(a, b, ratio=0.35, min_width=None, uniform=1):
    """Panel breakpoints on [a, b] graded geometrically toward ``a``.

    Panels shrink by ``ratio`` toward the left end until they are narrower
    than ``min_width``; the right part is split into ``uniform`` equal panels.
    """
    if b <= a:
        return np.array([a, b], dtype=float)
    width = b - a
    if min_width is None:
        min_width = width * 1e-6
    pts = [b]
    right = np.linspace(b, a + ratio * width, uniform + 1)[1:]
    pts.extend(right)
    cur = ratio * width
    while cur * ratio > min_width:
        cur *= ratio
        pts.append(a + cur)
    pts.append(a)
    return np.unique(np.array(pts))


def merge_breaks(a, b, extra):
    """Sorted breakpoints of [a, b] with the interior points of ``extra`` added."""
    extra = np.asarray(list(extra), dtype=float)
    extra = extra[(extra > a) & (extra < b)]
    return np.unique(np.concatenate([[a, b], extra]))


def tensor_rule(lower, upper, n):
    """Tensor Gauss-Legendre rule on a box; returns (nodes (M, d), weights (M,))."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    ns = np.broadcast_to(np.asarray(n), lower.shape)
    axes = [gauss_legendre(k, lo, hi) for k, lo, hi in zip(ns, lower, upper)]
    grids = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
    wgrids = np.meshgrid(*[ax[1] for ax in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def adaptive_gauss_legendre(func, a, b, tol=1e-12, n=10, max_depth=50):
    """Adaptive Gauss-Legendre quadrature of a (possibly array valued) function.

    ``func`` maps a 1-d array of nodes to an array whose first axis runs over
    the nodes.  An interval is accepted once its ``n`` and ``2n`` point rules
    agree to ``tol`` times the magnitude of the whole integral, weighted by the
    interval's share of [a, b]; otherwise it is bisected.
    """
    a, b = float(a), float(b)

    def estimate(lo, hi):
        x, w = gauss_legendre(2 * n, lo, hi)
        fine = np.tensordot(w, np.asarray(func(x), dtype=float), axes=(0, 0))
        x, w = gauss_legendre(n, lo, hi)
        coarse = np.tensordot(w, np.asarray(func(x), dtype=float), axes=(0, 0))
        return fine, float(np.max(np.abs(fine - coarse)))

    todo = [(a, b, 0) + estimate(a, b)]
    scale = max(float(np.max(np.abs(todo[0][3]))), 1e-300)
    accepted = []
    while todo:
        nxt = []
        for lo, hi, depth, val, err in todo:
            if err <= tol * scale * (hi - lo) / (b - a):
                accepted.append(val)
                continue
            if depth >= max_depth:
                raise QuadratureNotConverged(
                    f"adaptive quadrature on [{a}, {b}] did not reach tol={tol}")
            mid = 0.5 * (lo + hi)
            nxt.append((lo, mid, depth + 1) + estimate(lo, mid))
            nxt.append((mid, hi, depth + 1) + estimate(mid, hi))
        todo = nxt
    return sum(accepted)
