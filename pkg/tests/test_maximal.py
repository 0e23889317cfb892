import numpy as np
import pytest

from kfp.errors import (EllipticityViolated, EmptyBank, EmptyLadder, GridIncompatible, KTooSmall,
                        RadiusExceedsBox)
from kfp.expr import Expression
from kfp.fundamental import CoefficientPath
from kfp.geometry import BlockStructure, Group, Point
from kfp.grid import GridFunction
from kfp.maximal import (BallScanner, build_covering, check_oscillation_bound,
                         check_sobolev_estimate, coefficient_vmo, covering_ladder, doubling_witness,
                         half_ball_witness, hl_maximal, make_u_bank, maximal_bank_report,
                         maximal_functions, sample_coefficients, sharp_maximal, vmo_modulus)

KOL = Group(BlockStructure.kolmogorov())
HEAT = Group(BlockStructure.heat(1))
ONE = CoefficientPath.constant_alpha(1.0, 1)


def random_grid(shape, lower, upper, seed=0):
    rng = np.random.default_rng(seed)
    return GridFunction(lower, upper, rng.normal(size=shape))


def all_distances(group, f):
    """Dense matrix D[a, b] = d(node_a, node_b) (oracle for small grids)."""
    x, t = f.points()
    P = Point(x.reshape(-1, f.N), t.ravel())
    n = t.size
    D = np.empty((n, n))
    for b in range(n):
        D[:, b] = group.quasidistance(P, Point(P.x[b], P.t[b]))
    return D


def brute_maximal(group, f, radii):
    D = all_distances(group, f)
    v = f.values.ravel()
    M, S = np.abs(v).copy(), np.zeros(v.size)
    for c in range(v.size):
        for r in radii:
            m = D[:, c] < r
            if m.sum() <= 1:
                continue
            M[m] = np.maximum(M[m], np.abs(v[m]).mean())
            S[m] = np.maximum(S[m], np.abs(v[m] - v[m].mean()).mean())
    return M.reshape(f.shape), S.reshape(f.shape)


@pytest.mark.parametrize("group,shape", [(KOL, (7, 7, 6)), (HEAT, (11, 9))])
def test_maximal_matches_brute_force(group, shape):
    N = group.N
    f = random_grid(shape, [-1] * N + [0], [1] * N + [1])
    radii = [0.3, 0.6]
    M, S = maximal_functions(group, f, radii)
    bm, bs = brute_maximal(group, f, radii)
    np.testing.assert_allclose(M.values, bm, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(S.values, bs, rtol=1e-12, atol=1e-14)


def test_maximal_properties():
    f = random_grid((9, 9, 7), [-1, -1, 0], [1, 1, 1], seed=1)
    radii = [0.2, 0.4, 0.8]
    M, S = maximal_functions(KOL, f, radii)
    assert np.all(M.values >= np.abs(f.values))
    assert np.all(S.values <= 2 * M.values + 1e-12)
    a = -3.5
    np.testing.assert_allclose(hl_maximal(KOL, f * a, radii).values, abs(a) * M.values, rtol=1e-12)
    np.testing.assert_allclose(sharp_maximal(KOL, f * a, radii).values, abs(a) * S.values, rtol=1e-12)
    # a longer ladder can only increase both functions
    M2, S2 = maximal_functions(KOL, f, radii + [1.2])
    assert np.all(M2.values >= M.values) and np.all(S2.values >= S.values)
    const = f.like(np.full(f.shape, 2.0))
    Mc, Sc = maximal_functions(KOL, const, radii)
    np.testing.assert_allclose(Mc.values, 2.0, rtol=1e-15)
    np.testing.assert_allclose(Sc.values, 0.0, atol=1e-15)
    with pytest.raises(EmptyLadder):
        hl_maximal(KOL, f, [])
    with pytest.raises(ValueError):
        hl_maximal(KOL, f, [0.1, -1])
    with pytest.raises(GridIncompatible):
        hl_maximal(HEAT, f, radii)


def brute_partial_oscillation(group, f, r, index):
    D = all_distances(group, f)
    x, t = f.points()
    flat = np.ravel_multi_index(index, f.shape)
    m = D[:, flat] < r
    X, T, V = x.reshape(-1, f.N), t.ravel(), f.values.ravel()
    members = np.flatnonzero(m)
    total = 0.0
    for a in members:
        # mean over the ball of f(y, t_a): every member (y, s) contributes f(y, t_a)
        same_t = [b for b in members]
        vals = []
        for b in same_t:
            k = np.flatnonzero(np.all(X == X[b], axis=1) & (T == T[a]))[0]
            vals.append(V[k])
        total += abs(V[a] - np.mean(vals))
    return total / members.size


def test_partial_oscillation_brute_force():
    f = random_grid((7, 7, 5), [-1, -1, 0], [1, 1, 1], seed=2)
    scan = BallScanner(KOL, f)
    from kfp.maximal import partial_oscillation
    for index, r in [((3, 3, 2), 0.6), ((2, 4, 1), 0.45)]:
        got = partial_oscillation(scan, f.values, r, *scan.node(index))
        assert got == pytest.approx(brute_partial_oscillation(KOL, f, r, index), rel=1e-12)


def test_vmo_modulus():
    G = GridFunction([-1, -1, 0], [1, 1, 1], np.zeros((13, 13, 11)))
    x, t = G.points()
    # a function of t only has zero oscillation in x
    rep = vmo_modulus(KOL, G.like(np.sin(3 * t)), [0.2, 0.3])
    np.testing.assert_array_equal(rep.eta, 0.0)
    f = G.like(np.sign(x[..., 0]) * np.cos(t))
    rep = vmo_modulus(KOL, f, [0.1, 0.2, 0.3])
    assert np.all(np.diff(rep.eta) >= 0)
    assert rep.eta.max() <= 2 * rep.sup_norm
    assert rep.eta[-1] > 0.1
    d = rep.to_dict()
    assert set(d) == {"radii", "eta", "at_radius", "centers", "sup_norm"}
    with pytest.raises(RadiusExceedsBox):
        vmo_modulus(KOL, f, [5.0])
    # smooth coefficients: the modulus shrinks with the radius
    coeff = lambda x, t: (1 + 0.3 * np.sin(x[..., 0]) * np.cos(t))[..., None, None]  # noqa: E731
    cv = coefficient_vmo(KOL, coeff, G, [0.1, 0.2, 0.4])
    assert cv.eta[0] < cv.eta[-1] < 0.3


def test_covering_brute_force():
    lower, upper = [-0.5, -0.5, 0], [0.5, 0.5, 0.5]
    R = 0.5
    fam = build_covering(KOL, lower, upper, R, H=2.0, shape=(7, 7, 6))
    mesh = np.meshgrid(*[np.linspace(a, b, n) for a, b, n in zip(lower, upper, (7, 7, 6))], indexing="ij")
    pts = Point(np.stack([m.ravel() for m in mesh[:-1]], -1), mesh[-1].ravel())
    C = fam.centers
    dist = np.stack([KOL.quasidistance(pts, Point(c[:-1], c[-1])) for c in C], axis=1)
    assert fam.covered and np.all(dist.min(axis=1) < R)
    # greedy: each later center is at least R/2 from every earlier one
    for j in range(1, len(C)):
        dj = KOL.quasidistance(Point(C[:j, :-1], C[:j, -1]), Point(C[j, :-1], C[j, -1]))
        assert np.all(dj >= 0.5 * R)
    counts = (dist < 2.0 * R).sum(axis=1)
    assert fam.overlap_bound == counts.max()
    np.testing.assert_array_equal(fam.counts.ravel(), counts)
    tiny = build_covering(KOL, [0, 0, 0], [1e-3, 1e-3, 1e-6], 1.0, shape=(3, 3, 3))
    assert len(tiny.centers) == 1 and tiny.overlap_bound == 1
    with pytest.raises(ValueError):
        build_covering(KOL, lower, upper, R, H=1.0)
    with pytest.raises(GridIncompatible):
        build_covering(KOL, [0, 0], [1, 1], R)


@pytest.mark.parametrize("group", [KOL, HEAT])
def test_covering_ladder_is_scale_free(group):
    N = group.N
    rep = covering_ladder(group, [2.0] * N + [1.0], [0.25, 0.5, 1.0], shape=(11,) * (N + 1))
    assert rep["covered"]
    # dilated boxes with a fixed node count give the same construction at every R
    assert rep["spread"] == 0


def test_doubling_and_half_ball():
    dbl = doubling_witness(KOL, [0.1, 1.0], [None, [0.3, -0.2, 0.5]], mc_samples=40_000)
    assert dbl["bound"] == 2.0 ** 6
    assert dbl["pass"]
    # Lebesgue measure is invariant and homogeneous: the ratio is 2^{Q+2} up to sampling error
    for row in dbl["rows"]:
        assert abs(row["ratio"] / dbl["bound"] - 1) < row["rel_tol"] + 1e-12 or row["pass"]
    hb = half_ball_witness(KOL, 1.0, [[0, 0, 0.5], [0.2, 0.1, 0.99]], [0.2, 0.6], mc_samples=20_000)
    assert hb["pass"]
    with pytest.raises(ValueError):
        half_ball_witness(KOL, 1.0, [[0, 0, 1.5]], [0.2])


def test_u_bank_is_compactly_supported():
    bank = make_u_bank(KOL, 6, seed=0)
    again = make_u_bank(KOL, 6, seed=0)
    assert bank == again
    G = GridFunction([-1.2, -1.2, 0], [1.2, 1.2, 1.2], np.zeros((25, 25, 25)))
    x, t = G.points()
    for u in bank:
        v = G.like(Expression(u, 2)(x, t))
        assert v.boundary_max() == 0.0 and np.abs(v.values).max() > 1e-3


def test_oscillation_bound():
    bank = make_u_bank(KOL, 2, seed=0, lower=[-0.9, -0.9], upper=[0.9, 0.9])
    kap = KOL.kappa
    args = (KOL, ONE, bank, [4 * kap, 8 * kap], 2.0, [0.2, 0.3], [-1.5, -1.5, 0], [1.5, 1.5, 1.2],
            (17, 17, 13))
    rep = check_oscillation_bound(*args, balls_per_radius=4)
    assert rep["finite"] and 0 < rep["constant"] < np.inf
    assert rep == check_oscillation_bound(*args, balls_per_radius=4)
    with pytest.raises(KTooSmall):
        check_oscillation_bound(KOL, ONE, bank, [kap], 2.0, [0.2], [-1.5, -1.5, 0], [1.5, 1.5, 1.2],
                                (9, 9, 7))
    with pytest.raises(EmptyBank):
        check_oscillation_bound(KOL, ONE, [], [4 * kap], 2.0, [0.2], [-1.5, -1.5, 0], [1.5, 1.5, 1.2],
                                (9, 9, 7))
    with pytest.raises(RadiusExceedsBox):
        check_oscillation_bound(KOL, ONE, bank, [4 * kap], 2.0, [5.0], [-1.5, -1.5, 0], [1.5, 1.5, 1.2],
                                (9, 9, 7))


def test_sobolev_estimate_heat_plancherel_oracle():
    # for a u_xx - u_t with a = 1, Plancherel gives ||u_xx||_2 <= ||L u||_2 since |k^2| <= |k^2 + i w|
    bank = make_u_bank(HEAT, 4, seed=0)
    coeff = lambda x, t: np.ones(np.shape(t) + (1, 1))  # noqa: E731
    rep = check_sobolev_estimate(HEAT, coeff, 1.0, bank, 2.0, [-1.5, 0], [1.5, 1.2], (301, 241))
    G = GridFunction([-1.5, 0], [1.5, 1.2], np.zeros((301, 241)))
    x, t = G.points()
    for u in bank:
        U = G.like(Expression(u, 1)(x, t))
        Lu = U.apply_operator(np.eye(1), HEAT.B)
        assert U.d2(0, 0).lp_norm(2) <= 1.01 * Lu.lp_norm(2)
    assert rep["finite"] and rep["constant"] < 10
    assert rep["interp_sup"] >= rep["interp_constant"] > 0


def test_sobolev_estimate_properties():
    bank = make_u_bank(KOL, 3, seed=1)
    coeff = lambda x, t: (1 + 0.3 * np.sin(x[..., 0]) * np.cos(t))[..., None, None]  # noqa: E731
    box = ([-1.5, -1.5, 0], [1.5, 1.5, 1.2])
    rep = check_sobolev_estimate(KOL, coeff, 0.5, bank, 2.0, *box, (31, 31, 25), lam_ladder=[0, 10, 100])
    G = GridFunction(*box, np.zeros((31, 31, 25)))
    x, t = G.points()
    scaled = [G.like(7 * Expression(u, 2)(x, t)) for u in bank]
    rep7 = check_sobolev_estimate(KOL, coeff, 0.5, scaled, 2.0, *box, (31, 31, 25), lam_ladder=[0, 10, 100])
    # every ratio is homogeneous of degree zero in u
    np.testing.assert_allclose(rep7["ratios"], rep["ratios"], rtol=1e-12)
    assert rep7["interp_constant"] == pytest.approx(rep["interp_constant"], rel=1e-12)
    # damping: ||u||_{W^{2,p}} / ||Lu - lam u|| decreases once lam dominates
    assert rep["damped_constant"][2] < rep["damped_constant"][0]
    fine = check_sobolev_estimate(KOL, coeff, 0.5, bank, 2.0, *box, (61, 61, 49))
    assert 0.5 < fine["constant"] / rep["constant"] < 2
    assert 0.5 < fine["interp_sup"] / rep["interp_sup"] < 2
    with pytest.raises(EllipticityViolated):
        sample_coefficients(lambda x, t: 0.1 + 0 * t[..., None, None], G, 0.5)
    with pytest.raises(EmptyBank):
        check_sobolev_estimate(KOL, coeff, 0.5, [], 2.0, *box, (9, 9, 9))


def test_maximal_bank_report():
    G = GridFunction([-1, -1, 0], [1, 1, 1], np.zeros((9, 9, 7)))
    bank = [random_grid(G.shape, G.lower, G.upper, seed=s) for s in range(3)]
    rep = maximal_bank_report(KOL, bank, [0.3, 0.6])
    assert rep["finite"] and rep["dominance_gap"] <= 0
    assert rep["hl_max"] >= 1.0
    assert len(rep["hl_ratio"]) == 3
    with pytest.raises(EmptyBank):
        maximal_bank_report(KOL, [], [0.3])
