"""Singular integrals T_ij f = d^2_{x_i x_j} of the potential, and their truncations.

For f partially Hoelder in x and compactly supported,

    T_ij f(x,t)     = int int d_ij Gamma(x,t;y,s) [f(E(s-t) x, s) - f(y, s)] dy ds
    T^eps_ij f(x,t) = - int int phi_eps(t-s) d_ij Gamma(x,t;y,s) f(y,s) dy ds

with phi_eps a smooth cutoff vanishing for t - s <= eps and equal to one for
t - s >= 2 eps.  For u compactly supported, T_ij(Lbar u) = d_ij u.
"""

from dataclasses import dataclass

import numpy as np

from .cauchy import _output_grid, as_source, check_compact
from .errors import EmptyBank, GridIncompatible, HolderSeminormUnbounded
from .fundamental import cancellation_integrals, mean_value_triples
from .geometry import Point, as_point
from .grid import GridFunction, Source, bump, smoothstep, smoothstep_derivative
from .potentials import SpectralEngine, TimeRule, Weight, pointwise_potential

HOLDER_THRESHOLD = 1e8


@dataclass(frozen=True)
class TruncationProfile:
    """phi_eps(tau) = S((tau - eps) / eps) with S the quintic smoothstep.

    phi vanishes on (-inf, eps], equals 1 on [2 eps, inf), is nondecreasing,
    and |phi'| <= 1.875 / eps.
    """

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def __call__(self, tau):
        return smoothstep((np.asarray(tau, dtype=float) - self.epsilon) / self.epsilon)

    def derivative(self, tau):
        return smoothstep_derivative((np.asarray(tau, dtype=float) - self.epsilon) / self.epsilon) / self.epsilon

    @property
    def derivative_bound(self):
        return 1.875 / self.epsilon

    def weight(self):
        """The time weight phi_eps for the potential engines."""
        return Weight(self.__call__, (self.epsilon, 2 * self.epsilon), (self.epsilon, np.inf),
                      f"phi_{self.epsilon:g}")

    def gap_weight(self):
        """1 - phi_eps, supported on [0, 2 eps]: the part removed by the truncation."""
        eps = self.epsilon
        return Weight(lambda tau: 1.0 - self(tau), (eps,), (0.0, 2 * eps), f"1-phi_{eps:g}")

    def check(self, n=20001):
        """Sampled check of the defining properties; returns the worst violations."""
        eps = self.epsilon
        tau = np.linspace(-eps, 4 * eps, n)
        phi = self(tau)
        return {
            "range": float(max(-phi.min(), phi.max() - 1.0, 0.0)),
            "zero_below_eps": float(np.abs(phi[tau <= eps]).max()),
            "one_above_2eps": float(np.abs(phi[tau >= 2 * eps] - 1.0).max()),
            "monotone": bool(np.all(np.diff(phi) >= -1e-15)),
            "derivative_times_eps": float(np.abs(self.derivative(tau)).max() * eps),
        }


def _check_holder(f, grid, alpha, threshold):
    if alpha is None:
        return None
    if isinstance(f, GridFunction):
        sampled = f
    else:
        x, t = grid.points()
        sampled = grid.like(as_source(f)(x, t))
    semi = sampled.holder_seminorm_x(alpha)
    if not np.isfinite(semi) or semi > threshold:
        raise HolderSeminormUnbounded(f"discrete C^{alpha} seminorm {semi:.3g} exceeds {threshold:.3g}")
    return semi


def _check_indices(kernel, i, j):
    if not (0 <= i < kernel.q and 0 <= j < kernel.q):
        raise ValueError(f"indices ({i}, {j}) must address the first q = {kernel.q} variables")


def _apply(kernel, f, i, j, weights, grid, backend, trule):
    check_compact(f)
    grid = _output_grid(f, grid)
    src = as_source(f)
    if src.N != kernel.N or grid.N != kernel.N:
        raise GridIncompatible("source, grid and operator dimensions differ")
    times = grid.axes()[-1]
    if backend == "spectral":
        eng = SpectralEngine(kernel, grid.lower[:-1], grid.upper[:-1], grid.shape[:-1],
                             src.lower, src.upper, times.max(), min(times.min(), src.lower[-1]))
        outs = eng.potential_multi(src, times, (i, j), weights, trule)
    elif backend == "pointwise":
        x, _ = grid.points()
        outs = [np.stack([pointwise_potential(kernel, src, x[..., k, :], t, (i, j), w, trule=trule)
                          for k, t in enumerate(times)], axis=-1) for w in weights]
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return [GridFunction(grid.lower, grid.upper, -v, True) for v in outs]


def apply_Tij(kernel, f, i, j, grid=None, backend="spectral", alpha=None,
              holder_threshold=HOLDER_THRESHOLD, trule=None):
    """T_ij f on a grid (default: the grid of ``f``).

    With ``alpha`` the discrete partial C^alpha seminorm of f is checked first.
    """
    _check_indices(kernel, i, j)
    grid = _output_grid(f, grid)
    _check_holder(f, grid, alpha, holder_threshold)
    return _apply(kernel, f, i, j, [Weight()], grid, backend, trule)[0]


def apply_Tij_eps(kernel, f, i, j, profile, grid=None, backend="spectral", trule=None):
    """T^eps_ij f = -int int phi_eps(t-s) d_ij Gamma f dy ds."""
    _check_indices(kernel, i, j)
    return _apply(kernel, f, i, j, [profile.weight()], grid, backend, trule)[0]


def truncation_ladder(kernel, f, i, j, epsilons, grid=None, trule=None):
    """T f and T^eps f for every eps from a single spectral sweep: (T f, [T^eps f])."""
    _check_indices(kernel, i, j)
    weights = [Weight()] + [TruncationProfile(e).weight() for e in epsilons]
    outs = _apply(kernel, f, i, j, weights, grid, "spectral", trule)
    return outs[0], outs[1:]


def Tij_points(kernel, src, i, j, x, t, profile=None, trule=None, srule=None):
    """T_ij f (or T^eps_ij f) at points x (..., N) sharing the time t, by nested quadrature."""
    _check_indices(kernel, i, j)
    w = Weight() if profile is None else profile.weight()
    return -pointwise_potential(kernel, as_source(src), x, t, (i, j), w, srule, trule)


def truncation_gap(kernel, src, i, j, profile, x, t, trule=None, srule=None):
    """(T_ij - T^eps_ij) f at points x, integrated directly over t - s < 2 eps."""
    _check_indices(kernel, i, j)
    return -pointwise_potential(kernel, as_source(src), x, t, (i, j), profile.gap_weight(), srule, trule)


def epsilon_ladder(kernel, src, i, j, epsilons, x, t, trule=None, srule=None):
    """sup_x |T f - T^eps f| along an eps-ladder with its log-log slope."""
    eps = np.asarray(sorted(epsilons, reverse=True), dtype=float)
    gaps = np.array([float(np.max(np.abs(truncation_gap(kernel, src, i, j, TruncationProfile(e),
                                                          x, t, trule, srule)))) for e in eps])
    slope = float(np.polyfit(np.log(eps), np.log(gaps), 1)[0])
    return {"epsilon": eps.tolist(), "sup_gap": gaps.tolist(), "slope": slope,
            "monotone": bool(np.all(np.diff(gaps) < 0))}


# ------------------------------------------------------------- test bank
def make_test_bank(group, n=24, seed=0, lower=None, upper=None, t_range=(0.1, 0.9)):
    """Compactly supported sources for operator-norm experiments.

    A third are products of bumps with random anisotropic widths (scaled like
    the dilations), a third are such bumps times a plane wave, and a third are
    slowly varying in t and oscillating in x_1 (where |k|^2 dominates the time
    frequency, the regime that nearly extremizes the heat multiplier).
    """
    rng = np.random.default_rng(seed)
    N = group.N
    lower = np.full(N, -1.5) if lower is None else np.asarray(lower, float)
    upper = np.full(N, 1.5) if upper is None else np.asarray(upper, float)
    t0, t1 = t_range
    bank = []
    for k in range(n):
        kind = ("bump", "wave", "slow")[k % 3]
        lam = rng.uniform(0.4, 1.0)
        half = 0.5 * (upper - lower)
        width = np.minimum(half * lam ** group.exponents, half)
        center = 0.5 * (lower + upper) + rng.uniform(-0.3, 0.3, N) * (half - width)
        if kind == "slow":
            tw = 0.5 * (t1 - t0)
            tc = 0.5 * (t0 + t1)
            freq = np.zeros(N)
            freq[0] = rng.uniform(4.0, 10.0) / width[0]
        else:
            tw = rng.uniform(0.25, 0.5) * (t1 - t0)
            tc = rng.uniform(t0 + tw, t1 - tw)
            freq = rng.normal(size=N) * 3.0 / width if kind == "wave" else np.zeros(N)
        phase = rng.uniform(0, 2 * np.pi)

        def func(x, t, c=center, w=width, tc=tc, tw=tw, k=freq, ph=phase, wave=(kind != "bump")):
            val = bump(t, tc, tw)
            for a in range(N):
                val = val * bump(x[..., a], c[a], w[a])
            if wave:
                val = val * np.cos(x @ k + ph)
            return val

        bank.append(Source(func, np.append(center - width, tc - tw), np.append(center + width, tc + tw)))
    return bank


def empirical_operator_norm(kernel, i, j, epsilons, bank, p, grid, trule=None, with_limit=False):
    """max over the bank of ||T^eps f||_p / ||f||_p on ``grid`` for each eps.

    Returns a report with the per-eps maxima, the per-member table and the
    spread max/min of the maxima across the ladder.
    """
    bank = list(bank)
    if not bank:
        raise EmptyBank("the test bank is empty")
    ps = [float(v) for v in np.atleast_1d(p)]
    for v in ps:
        if not 1 < v < np.inf:
            raise ValueError("p must lie in (1, inf)")
    epsilons = [float(e) for e in epsilons]
    x, t = grid.points()
    table = {v: np.zeros((len(bank), len(epsilons) + 1)) for v in ps}
    for m, f in enumerate(bank):
        fg = grid.like(as_source(f)(x, t))
        tf, tfe = truncation_ladder(kernel, f, i, j, epsilons, grid, trule)
        for v in ps:
            fn = fg.lp_norm(v)
            table[v][m, 0] = tf.lp_norm(v) / fn
            table[v][m, 1:] = [g.lp_norm(v) / fn for g in tfe]
    report = {"epsilon": epsilons, "members": len(bank), "by_p": {}}
    for v in ps:
        best = table[v][:, 1:].max(axis=0)
        report["by_p"][v] = {"max_ratio": best.tolist(), "limit": float(table[v][:, 0].max()),
                             "spread": float(best.max() / best.min()),
                             "table": table[v].tolist()}
    return report


# ---------------------------------------------------------- kernel estimates
def _kernel_values(kernel, i, j, xi, eta):
    """K(xi, eta) = d_ij Gamma(xi; eta) (zero unless t > s)."""
    xi, eta = as_point(xi), as_point(eta)
    return kernel.derivative(xi.x, xi.t, eta.x, eta.t, (i, j))


def kernel_standard_estimates(kernel, i, j, samples=4000, seed=0, levels=(1.0, 0.1, 0.01),
                              r_list=(0.1, 1.0), tau_gap=1.0, cancellation=True):
    """Empirical size, smoothness (beta = 1) and cancellation constants of K = d_ij Gamma.

    size        sup (|K(xi,eta)| + |K(eta,xi)|) |B_d(xi)| over pairs contracted toward the pole;
    smoothness  sup |K(xi1,eta) - K(xi2,eta)| |B_d| d(xi1,eta) / d(xi1,xi2) (and with the
                arguments swapped) over triples with d(xi1,eta) >= 4 kappa d(xi1,xi2) > 0;
    cancellation sup over r of the cancellation integrals I and J.
    Each constant is also computed on half the sample to judge stability.
    """
    _check_indices(kernel, i, j)
    g = kernel.group
    omega = g.omega_exact
    Qp2 = kernel.Q + 2
    rng = np.random.default_rng(seed)
    eta = Point(rng.uniform(-1, 1, (samples, kernel.N)), rng.uniform(-1, 1, samples))
    zeta = Point(rng.uniform(-1, 1, (samples, kernel.N)) * rng.uniform(0, 1, (samples, 1)) ** 2,
                 rng.uniform(1e-3, 1.0, samples))

    def size(n):
        sup = 0.0
        for lam in levels:
            xi = g.compose(Point(eta.x[:n], eta.t[:n]), g.dilate(lam, Point(zeta.x[:n], zeta.t[:n])))
            e = Point(eta.x[:n], eta.t[:n])
            d = g.quasidistance(xi, e)
            k = np.abs(_kernel_values(kernel, i, j, xi, e)) + np.abs(_kernel_values(kernel, i, j, e, xi))
            sup = max(sup, float(np.max(k * omega * d ** Qp2)))
        return sup

    xi1, xi2, eta3 = mean_value_triples(kernel, samples, seed + 1)
    kappa = g.kappa

    def smooth(n):
        a, b, c = (Point(p.x[:n], p.t[:n]) for p in (xi1, xi2, eta3))
        d1 = g.quasidistance(a, c)
        d12 = g.quasidistance(a, b)
        ok = (d1 >= 4 * kappa * d12) & (d12 > 0)
        if not ok.any():
            return 0.0
        a, b, c = (Point(p.x[ok], p.t[ok]) for p in (a, b, c))
        diff = np.abs(_kernel_values(kernel, i, j, a, c) - _kernel_values(kernel, i, j, b, c))
        diff2 = np.abs(_kernel_values(kernel, i, j, c, a) - _kernel_values(kernel, i, j, c, b))
        ratio = np.maximum(diff, diff2) * omega * d1[ok] ** Qp2 * d1[ok] / d12[ok]
        return float(ratio.max())

    report = {"size": size(samples), "size_half": size(samples // 2),
              "smoothness": smooth(samples), "smoothness_half": smooth(samples // 2),
              "kappa": float(kappa), "omega": float(omega), "samples": samples}
    if cancellation:
        vals = []
        for r in r_list:
            I, J = cancellation_integrals(kernel, np.zeros(kernel.N), tau_gap + 1.0, r, 1.0, i, j)
            vals.append((float(r), I, J))
        report["cancellation"] = float(max(max(I, J) for _, I, J in vals))
        report["cancellation_table"] = vals
    for key in ("size", "smoothness"):
        a, b = report[key], report[f"{key}_half"]
        report[f"{key}_stable"] = bool(np.isfinite(a) and a < 2 * max(b, 1e-300))
    return report
