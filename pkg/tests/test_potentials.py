import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from kfp.fundamental import CoefficientPath, FundamentalSolution
from kfp.geometry import BlockStructure, Group
from kfp.grid import GridFunction, Source
from kfp.potentials import (SpectralEngine, SpectralGrid, TimeRule, Weight, _box_moments,
                            pointwise_initial, pointwise_potential, spectral_on_grid, tau_rule)

KOL = Group(BlockStructure.kolmogorov())
A = 0.7
KERNEL = FundamentalSolution(KOL, CoefficientPath.constant_alpha(A, 1))


def sde_gaussian(x, tau, a=A):
    """E exp(-|X|^2 / 2) for dX1 = sqrt(2a) dW, dX2 = X1 ds started at x, after time tau."""
    x = np.atleast_2d(x)
    m = np.stack([x[:, 0], x[:, 1] + tau * x[:, 0]], -1)
    S = 2 * a * np.array([[tau, tau ** 2 / 2], [tau ** 2 / 2, tau ** 3 / 3]])
    M = np.linalg.inv(np.eye(2) + S)
    return np.exp(-0.5 * np.einsum("ni,ij,nj->n", m, M, m)) / np.sqrt(np.linalg.det(np.eye(2) + S))


def gaussian(y, s=None):
    return np.exp(-0.5 * np.sum(y ** 2, axis=-1))


G0 = Source(gaussian, [-9, -9], [9, 9], has_time=False)
# the same profile switched on for s in [0, 1]
F0 = Source(gaussian, [-9, -9, 0], [9, 9, 1])


def potential_oracle(x, t):
    # V = int_0^t E g(X_tau) d tau  (the source is on for s in [0, 1])
    lo = max(0.0, t - 1.0)
    return np.array([quad(lambda tau: sde_gaussian(p, tau)[0], lo, t, epsabs=1e-14, epsrel=1e-13)[0]
                     for p in np.atleast_2d(x)])


PTS = np.array([[0.0, 0.0], [0.8, -0.5], [-1.2, 1.5], [2.0, 0.3]])


def test_box_moments_against_quadrature():
    a, b = np.array([-1.3, 0.2, -np.inf]), np.array([0.7, 2.5, np.inf])
    m0, m1, m2 = _box_moments(a, b)
    for k in range(3):
        lo, hi = a[k], b[k]
        assert m0[k] == pytest.approx(norm.cdf(hi) - norm.cdf(lo), abs=1e-15)
        assert m1[k] == pytest.approx(quad(lambda z: z * norm.pdf(z), lo, hi)[0], abs=1e-13)
        assert m2[k] == pytest.approx(quad(lambda z: (z * z - 1) * norm.pdf(z), lo, hi)[0], abs=1e-13)


def test_tau_rule():
    rule = TimeRule(dtau=0.1, nodes=4)
    x, w = tau_rule(0.0, 1.0, rule, extra=(0.33,))
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.dot(w, x ** 7) == pytest.approx(1 / 8, abs=1e-14)
    assert x.size == 4 * 11
    xg, wg = tau_rule(0.0, 1.0, TimeRule(dtau=0.5, nodes=8), grade_at_zero=True)
    assert xg.min() < 1e-10
    # graded panels integrate tau^{-1/2} up to the grading depth
    assert np.dot(wg, xg ** -0.5) == pytest.approx(2.0, rel=1e-6)
    assert tau_rule(1.0, 1.0, rule)[0].size == 0


def test_weights():
    w = Weight.damping(2.0).times(Weight(lambda tau: tau, (0.5,), (0.1, 3.0)))
    assert w(1.0) == pytest.approx(np.exp(-2.0))
    assert w.support == (0.1, 3.0) and w.breaks == (0.5,)
    assert Weight.damping(0.0).func is None


def test_pointwise_initial_matches_sde_oracle():
    for t in (0.05, 0.5, 2.0):
        got = pointwise_initial(KERNEL, G0, PTS, t)
        np.testing.assert_allclose(got, sde_gaussian(PTS, t), rtol=1e-7, atol=1e-12)
    np.testing.assert_array_equal(pointwise_initial(KERNEL, G0, PTS, 0.0), gaussian(PTS))


def test_pointwise_potential_matches_oracle():
    for t in (0.4, 1.6):
        np.testing.assert_allclose(pointwise_potential(KERNEL, F0, PTS, t), potential_oracle(PTS, t),
                                   rtol=1e-8, atol=1e-11)


def test_pointwise_gradient_matches_oracle():
    h = 1e-5
    t = 0.7
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (potential_oracle(PTS + e, t) - potential_oracle(PTS - e, t)) / (2 * h)
        got = pointwise_potential(KERNEL, F0, PTS, t, ell=(i,))
        np.testing.assert_allclose(got, fd, atol=1e-8)


def test_spectral_matches_oracle():
    grid = GridFunction([-3, -3, 0.25], [3, 3, 1.5], np.zeros((25, 25, 6)))
    V = spectral_on_grid(KERNEL, F0, grid)
    x, t = grid.points()
    sel = (slice(None, None, 6), slice(None, None, 6))
    for k, tk in enumerate(grid.axes()[-1]):
        ref = potential_oracle(x[sel + (k,)].reshape(-1, 2), tk).reshape(x[sel + (k,)].shape[:-1])
        np.testing.assert_allclose(V.values[sel + (k,)], ref, rtol=1e-8, atol=1e-11)
    eng = SpectralEngine(KERNEL, [-3, -3], [3, 3], (25, 25), G0.lower, G0.upper, 2.0)
    times = np.array([0.0, 0.5, 2.0])
    U = eng.initial(G0, times)
    xs = x[..., 0, :]
    for k, tk in enumerate(times):
        np.testing.assert_allclose(U[..., k], sde_gaussian(xs.reshape(-1, 2), tk).reshape(25, 25),
                                   atol=1e-11)


def test_spectral_and_pointwise_agree_on_second_derivatives():
    src = Source(lambda y, s: np.exp(-np.sum(y ** 2, -1)) * np.sin(3 * s) * (1 + y[..., 0]),
                 [-6, -6, 0], [6, 6, 1])
    grid = GridFunction([-2, -2, 0.3], [2, 2, 0.9], np.zeros((17, 17, 3)))
    x, _ = grid.points()
    for ell in ((0, 0), (0, 1), (1, 1)):
        V = spectral_on_grid(KERNEL, src, grid, ell=ell)
        for k, t in list(enumerate(grid.axes()[-1]))[1:]:
            P = pointwise_potential(KERNEL, src, x[::8, ::8, k], t, ell=ell)
            scale = np.abs(V.values[..., k]).max()
            # (1, 1) differentiates twice along the slow variable, where D^ell Gamma ~ tau^{-3}
            assert np.abs(P - V.values[::8, ::8, k]).max() < 5e-6 * scale


def test_spectral_grid_alignment():
    g = SpectralGrid.around([-1, 0], [1, 2], (5, 9), [-3, -1], [2, 5])
    nodes = g.nodes()
    inner = nodes[g.crop]
    np.testing.assert_allclose(inner[0, 0], [-1, 0], atol=1e-14)
    np.testing.assert_allclose(inner[-1, -1], [1, 2], atol=1e-14)
    assert nodes[0, 0, 0] <= -3 and nodes[-1, 0, 0] >= 2
    assert nodes[0, 0, 1] <= -1 and nodes[0, -1, 1] >= 5


def test_chain_spectral_vs_pointwise():
    chain = Group(BlockStructure.chain(2))
    k = FundamentalSolution(chain, CoefficientPath.piecewise_constant([0.5], [[[1.0]], [[2.0]]]))
    src = Source(lambda y, s: np.exp(-2 * np.sum(y ** 2, -1)) * (1 + s), [-4] * 3 + [0], [4] * 3 + [1])
    grid = GridFunction([-1.5] * 3 + [0.8], [1.5] * 3 + [1.0], np.zeros((13, 13, 13, 2)))
    rule = TimeRule(dtau=0.25)
    V = spectral_on_grid(k, src, grid, trule=rule)
    x, _ = grid.points()
    idx = ([6, 0, 12], [6, 12, 3], [6, 6, 9])
    P = pointwise_potential(k, src, x[idx + (1,)], 1.0, trule=rule)
    np.testing.assert_allclose(P, V.values[idx + (1,)], rtol=1e-7, atol=1e-10)
