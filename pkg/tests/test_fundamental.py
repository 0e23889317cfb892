import numpy as np
import pytest
from scipy import integrate, optimize

from kfp.errors import EllipticityViolated, NotAfterPole, ShapeMismatch, SingularCovariance
from kfp.fundamental import (CoefficientPath, FundamentalSolution, cancellation_inner,
                             cancellation_integrals, check_gaussian_bound, check_mean_value,
                             convolution_identity_check, covariance_homogeneity_check,
                             gamma_derivative_integrals, hessian_fd_check,
                             mean_value_triples, normalization_check, pde_residual_check)
from kfp.geometry import BlockStructure, Group, Point

KOL = Group(BlockStructure.kolmogorov())
CHAIN = Group(BlockStructure.chain(2))
PIECEWISE = CoefficientPath.piecewise_constant([-0.5, 0.25, 1.0], [[[0.5]], [[2.0]], [[1.0]], [[0.7]]])


def hand_C0(tau):
    return np.array([[tau, -tau ** 2 / 2], [-tau ** 2 / 2, tau ** 3 / 3]])


@pytest.mark.parametrize("tau", [1e-2, 1.0, 10.0])
def test_kolmogorov_covariance(tau):
    exact = FundamentalSolution(KOL, CoefficientPath.constant_alpha(1.0, 1))
    quad = FundamentalSolution(KOL, CoefficientPath.closed_form(lambda t: np.ones(np.shape(t) + (1, 1)), 1, 1.0))
    for cov in (exact.covariance(tau, 0.0), exact.covariance(tau + 3.0, 3.0, method="exact_piecewise"),
                quad.covariance(tau, 0.0)):
        np.testing.assert_allclose(cov.C, hand_C0(tau), rtol=1e-10)
    assert quad.covariance(tau, 0.0).method == "quadrature"
    assert np.linalg.det(exact.covariance(tau, 0.0).C) == pytest.approx(tau ** 4 / 12, rel=1e-10)


def test_covariance_quadrature_oracle_chain():
    path = CoefficientPath.piecewise_constant([0.3], [[[1.5]], [[0.6]]])
    K = FundamentalSolution(CHAIN, path)
    t, s = 1.7, -0.4

    def integrand(u):
        E = CHAIN.E(t - u)
        return E[:, :1] @ path(u) @ E[:, :1].T

    ref = integrate.quad_vec(integrand, s, t, epsabs=1e-14, epsrel=1e-13, points=[0.3])[0]
    np.testing.assert_allclose(K.covariance(t, s).C, ref, rtol=1e-11)
    np.testing.assert_allclose(K.covariance(t, s, method="quadrature").C, ref, rtol=1e-11)


def test_covariance_homogeneity():
    for path in (CoefficientPath.constant_alpha(1.0, 1), CoefficientPath.constant_alpha(0.3, 1)):
        out = covariance_homogeneity_check(FundamentalSolution(KOL, path))
        assert out["max_relative_error"] < 1e-12
    out = covariance_homogeneity_check(FundamentalSolution(CHAIN, CoefficientPath.constant_alpha(2.0, 1)))
    assert out["max_relative_error"] < 1e-12


def test_heat_kernel_pointwise():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3):
        K = FundamentalSolution(Group(BlockStructure.heat(n)), CoefficientPath.constant_alpha(1.0, n))
        x, y = rng.normal(size=(500, n)), rng.normal(size=(500, n))
        s = rng.uniform(-1, 1, 500)
        t = s + np.exp(rng.uniform(-5, 2, 500))
        peak = (4 * np.pi * (t - s)) ** (-n / 2)
        ref = peak * np.exp(-np.sum((x - y) ** 2, axis=1) / (4 * (t - s)))
        # relative agreement except in the far tail, where exp() itself
        # carries a relative rounding error of |exponent| * eps
        floor = peak * np.exp(-30.0)
        assert np.all(np.abs(K(x, t, y, s) - ref) <= 1e-13 * np.maximum(ref, floor))


def test_gamma_vanishes_before_pole():
    K = FundamentalSolution(KOL, PIECEWISE)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))
    s = rng.uniform(-1, 1, 200)
    t = s - rng.uniform(0, 1, 200)
    t[:20] = s[:20]
    assert np.all(K(x, t, y, s) == 0.0)
    t = s + rng.uniform(0.01, 1, 200)
    assert np.all(K(x, t, y, s) >= 0.0)
    ev = K.gamma((x[0], t[0]), (y[0], s[0]))
    assert ev.hess_x.shape == (1, 1) and ev.grad_x.shape == (2,)
    assert ev.covariance_used.method == "exact_piecewise"


def test_errors():
    K = FundamentalSolution(CHAIN, CoefficientPath.constant_alpha(1.0, 1))
    with pytest.raises(NotAfterPole):
        K.covariance(0.0, 0.0)
    with pytest.raises(SingularCovariance):
        K.covariance(1e-70, 0.0)
    with pytest.raises(EllipticityViolated):
        CoefficientPath.constant_matrix([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(EllipticityViolated):
        CoefficientPath.closed_form(lambda t: 3.0 + 0 * t[..., None, None], 1, 0.5)(np.zeros(3))
    with pytest.raises(ShapeMismatch):
        FundamentalSolution(KOL, CoefficientPath.constant_alpha(1.0, 2))
    with pytest.raises(NotAfterPole):
        gamma_derivative_integrals(K, np.zeros(3), 0.0, 1.0)


@pytest.mark.parametrize("group,path", [
    (KOL, CoefficientPath.constant_alpha(1.0, 1)),
    (KOL, PIECEWISE),
    (CHAIN, CoefficientPath.constant_alpha(0.5, 1)),
    (Group(BlockStructure(q=2, m=(1,), blocks=([[1.0, 0.5]],))),
     CoefficientPath.constant_matrix([[1.0, 0.3], [0.3, 0.8]])),
])
def test_normalization_and_vanishing_integrals(group, path):
    out = normalization_check(FundamentalSolution(group, path), n_samples=20, seed=1)
    assert out["mass_error"] < 1e-6
    assert out["derivative_integral"] < 1e-6


def test_derivative_integral_heat_odd():
    K = FundamentalSolution(Group(BlockStructure.heat(2)), CoefficientPath.constant_alpha(1.0, 2))
    for ell in [(0,), (1,), (0, 0, 1), (0, 1, 1)]:
        assert abs(gamma_derivative_integrals(K, np.array([0.3, -0.2]), 0.7, 0.2, ell)) < 1e-12
    assert gamma_derivative_integrals(K, np.zeros(2), 1.0, 0.0) == pytest.approx(1.0, abs=1e-6)
    Kk = FundamentalSolution(KOL, CoefficientPath.constant_alpha(1.0, 1))
    assert abs(gamma_derivative_integrals(Kk, np.array([0.4, 1.0]), 2.0, 0.5, (0,))) < 1e-6
    with pytest.raises(ValueError):
        Kk.derivative(np.zeros(2), 1.0, np.zeros(2), 0.0, (1, 1))


def test_general_derivative_matches_hessian():
    K = FundamentalSolution(CHAIN, PIECEWISE)
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(50, 3)) * 0.3, rng.normal(size=(50, 3)) * 0.3
    t, s = 0.9, 0.1
    v, g, H = K.derivatives(x, t, y, s)
    np.testing.assert_allclose(K.derivative(x, t, y, s, ()), v, rtol=1e-14)
    np.testing.assert_allclose(K.derivative(x, t, y, s, (1,)), g[:, 1], rtol=1e-13)
    np.testing.assert_allclose(K.derivative(x, t, y, s, (0, 1)), H[:, 0, 1], rtol=1e-12, atol=1e-14 * np.abs(H).max())
    # third derivative against differences of the analytic Hessian
    h = 1e-5
    e = np.array([h, 0, 0])
    fd = (K.derivatives(x + e, t, y, s)[2][:, 0, 0] - K.derivatives(x - e, t, y, s)[2][:, 0, 0]) / (2 * h)
    np.testing.assert_allclose(K.derivative(x, t, y, s, (0, 0, 0)), fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())


@pytest.mark.parametrize("group,path", [
    (KOL, CoefficientPath.constant_alpha(1.0, 1)),
    (KOL, PIECEWISE),
    (CHAIN, CoefficientPath.constant_alpha(1.0, 1)),
    (KOL, CoefficientPath.closed_form(lambda t: (1.2 + 0.5 * np.sin(3 * t))[..., None, None], 1, 0.5)),
])
def test_hessian_and_pde_residual(group, path):
    K = FundamentalSolution(group, path)
    assert hessian_fd_check(K, n_points=1000, seed=2)["max_relative_error"] < 1e-6
    assert pde_residual_check(K, n_points=200, seed=2)["max_relative_residual"] < 1e-4


def test_convolution_identity():
    for group in (KOL, CHAIN):
        K = FundamentalSolution(group, CoefficientPath.constant_alpha(1.3, 1))
        assert convolution_identity_check(K)["max_relative_error"] < 1e-12


def test_dilation_scaling():
    K = FundamentalSolution(KOL, CoefficientPath.constant_alpha(1.0, 1))
    rng = np.random.default_rng(4)
    xi = Point(rng.normal(size=(100, 2)), rng.uniform(0.5, 1.5, 100))
    eta = Point(rng.normal(size=(100, 2)) * 0.2, rng.uniform(-0.5, 0.4, 100))
    v, _, H = K.derivatives(xi.x, xi.t, eta.x, eta.t)
    for lam in (0.5, 2.0):
        a, b = KOL.dilate(lam, xi), KOL.dilate(lam, eta)
        vl, _, Hl = K.derivatives(a.x, a.t, b.x, b.t)
        np.testing.assert_allclose(vl, lam ** -KOL.Q * v, rtol=1e-12)
        np.testing.assert_allclose(Hl[:, 0, 0], lam ** -(KOL.Q + 2) * H[:, 0, 0], rtol=1e-10)


def test_gaussian_bound_stable_and_heat_oracle():
    K = FundamentalSolution(KOL, PIECEWISE)
    rep = check_gaussian_bound(K, n_samples=3000)
    assert rep["stable"] and not rep["diverging"] and np.isfinite(rep["constant"])
    # 1-d heat: sup over x of |G''(x, 1)| (|x| + 1)^3 by scaling
    H = FundamentalSolution(Group(BlockStructure.heat(1)), CoefficientPath.constant_alpha(1.0, 1))

    def h(x):
        G = np.exp(-x * x / 4) / np.sqrt(4 * np.pi)
        return abs(G * (x * x / 4 - 0.5)) * (abs(x) + 1) ** 3

    xs = np.linspace(0, 12, 24001)
    k = np.argmax([h(v) for v in xs])
    res = optimize.minimize_scalar(lambda v: -h(v), bounds=(xs[max(k - 1, 0)], xs[k + 1]), method="bounded",
                                   options={"xatol": 1e-12})
    oracle = -res.fun
    rep = check_gaussian_bound(H, n_samples=20000, seed=1)
    assert rep["constant"] <= oracle * (1 + 1e-10)
    assert rep["constant"] >= 0.99 * oracle


def test_mean_value():
    K = FundamentalSolution(KOL, CoefficientPath.constant_alpha(1.0, 1))
    rep = check_mean_value(K, n_samples=3000, kappa=KOL.kappa)
    assert rep["admissible"] > 0 and rep["rejected"] > 0 and np.isfinite(rep["constant"])
    xi1, _, eta = mean_value_triples(K, 100)
    same = check_mean_value(K, triples=(xi1, xi1, eta), kappa=1.0)
    assert same["admissible"] == 0 and same["constant"] == 0.0
    # heat oracle: closed-form second derivative of the 1-d Gaussian
    H = FundamentalSolution(Group(BlockStructure.heat(1)), CoefficientPath.constant_alpha(1.0, 1))
    xi1, xi2, eta = mean_value_triples(H, 2000, seed=3)

    def d2(x, t, y, s):
        tau = t - s
        z = x[:, 0] - y[:, 0]
        G = np.exp(-z * z / (4 * tau)) / np.sqrt(4 * np.pi * tau)
        return np.where(tau > 0, G * (z * z / (4 * tau ** 2) - 1 / (2 * tau)), 0.0)

    d1 = np.abs(xi1.x[:, 0] - eta.x[:, 0]) + np.sqrt(np.abs(xi1.t - eta.t))
    d12 = np.abs(xi1.x[:, 0] - xi2.x[:, 0]) + np.sqrt(np.abs(xi1.t - xi2.t))
    ok = (d1 >= 4 * d12) & (d12 > 0)
    ratio = np.abs(d2(*xi1, *eta) - d2(*xi2, *eta)) * d1 ** 4 / np.where(ok, d12, 1.0)
    rep = check_mean_value(H, triples=(xi1, xi2, eta), kappa=1.0)
    assert rep["admissible"] == ok.sum()
    assert rep["constant"] == pytest.approx(ratio[ok].max(), rel=1e-9)


def _g(z, tau):
    return np.exp(-z * z / (4 * tau)) / np.sqrt(4 * np.pi * tau)


def test_cancellation_heat_oracles():
    H1 = FundamentalSolution(Group(BlockStructure.heat(1)), CoefficientPath.constant_alpha(1.0, 1))
    H2 = FundamentalSolution(Group(BlockStructure.heat(2)), CoefficientPath.constant_alpha(1.0, 2))
    for r, tau in [(1.0, 0.1), (1.0, 0.5), (0.3, 0.01), (5.0, 3.0)]:
        rho = r - np.sqrt(tau)
        assert cancellation_inner(H1, tau, 0.0, r, 0, 0) == pytest.approx(rho / tau * _g(rho, tau), rel=1e-6)

        def dg(z):
            return -z / (2 * tau) * _g(z, tau)

        oracle = -integrate.quad(lambda w: (dg(rho - abs(w)) - dg(abs(w) - rho)) * _g(w, tau), -rho, rho,
                                 points=[0.0], epsabs=0, epsrel=1e-13)[0]
        assert cancellation_inner(H2, tau, 0.0, r, 0, 0) == pytest.approx(oracle, rel=1e-6)
        assert abs(cancellation_inner(H2, tau, 0.0, r, 0, 1)) < 1e-12
    assert cancellation_inner(H1, 4.0, 0.0, 1.0, 0, 0) == 0.0
    # full time integral in the 1-d heat case
    r = 0.7
    ref = integrate.quad(lambda s: 2 * s * abs((r - s) / s ** 2 * _g(r - s, s * s)), 0, r, epsrel=1e-12)[0]
    I, J = cancellation_integrals(H1, np.zeros(1), 0.0, r, -10.0)
    assert I == pytest.approx(ref, rel=1e-6) and J == pytest.approx(ref, rel=1e-6)


def test_cancellation_far_region_empty():
    K = FundamentalSolution(KOL, CoefficientPath.constant_alpha(1.0, 1))
    I, J = cancellation_integrals(K, np.zeros(2), 0.0, 1e3, -1e-2)
    assert I < 1e-10 and J < 1e-10


def test_cancellation_swapped_matches_direct_quadrature():
    K = FundamentalSolution(KOL, CoefficientPath.constant_alpha(1.0, 1))
    t, s, r = 0.5, 0.0, 1.2
    rho = r - np.sqrt(t - s)
    # brute force over the quasi-ball in x for the pole (0, s): with
    # v = -E(s-t) x the region is |v1| + |v2|^{1/3} < rho, i.e. x1 = -v1 and
    # x2 = tau v1 - v2 ranging over tau v1 +- (rho - |x1|)^3
    tau = t - s

    def integrand(x2, x1):
        return K.derivatives(np.array([x1, x2]), t, np.zeros(2), s)[2][0, 0]

    inside = integrate.dblquad(integrand, -rho, rho,
                               lambda x1: -tau * x1 - (rho - abs(x1)) ** 3,
                               lambda x1: -tau * x1 + (rho - abs(x1)) ** 3,
                               epsabs=1e-12, epsrel=1e-10)[0]
    val = cancellation_inner(K, t, s, r, 0, 0, swapped=True)
    assert val == pytest.approx(-inside, rel=1e-7)


def test_cancellation_uniform_in_r():
    bps = np.sort(-np.geomspace(1e-4, 150.0, 16))
    mats = [[[a]] for a in np.resize([0.5, 1.7, 1.0, 0.8], bps.size + 1)]
    K = FundamentalSolution(KOL, CoefficientPath.piecewise_constant(bps, mats))
    vals = [cancellation_integrals(K, np.zeros(2), 0.0, r, -200.0)[0] for r in (1e-2, 1e-1, 1.0, 10.0)]
    assert np.all(np.isfinite(vals)) and max(vals) / min(vals) < 10
