"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
"acceptance criteria" section of the terminal summary.  Criterion 11 compares
against ``tests/baselines/estimates.json``, written on the first run (or
rewritten when ``KFP_UPDATE_BASELINES=1``).
"""

import json
import os
import time
from pathlib import Path

import numpy as np

from kfp.cauchy import CauchyProblem, refinement_ladder, solve_cauchy
from kfp.expr import ManufacturedSolution
from kfp.fundamental import (CoefficientPath, FundamentalSolution, cancellation_inner,
                             cancellation_integrals, covariance_homogeneity_check, hessian_fd_check,
                             normalization_check, pde_residual_check)
from kfp.geometry import BlockStructure, Group, axiom_suite
from kfp.grid import GridFunction, Source, bump, window
from kfp.maximal import (check_oscillation_bound, check_sobolev_estimate, covering_ladder,
                         doubling_witness, make_u_bank, maximal_bank_report)
from kfp.potentials import TimeRule
from kfp.singular import apply_Tij, empirical_operator_norm, epsilon_ladder, make_test_bank

KOL = Group(BlockStructure.kolmogorov())
CHAIN = Group(BlockStructure.chain(2))
HEAT1 = Group(BlockStructure.heat(1))
ONE = CoefficientPath.constant_alpha(1.0, 1)
PIECEWISE = CoefficientPath.piecewise_constant([0.5], [[[1.0]], [[2.0]]])
BASELINES = Path(__file__).parent / "baselines" / "estimates.json"


def test_01_group_axioms(criterion):
    t0 = time.perf_counter()
    worst = {}
    for name, g in (("kolmogorov", KOL), ("chain", CHAIN)):
        for axiom, err, *_ in axiom_suite(g, n=10_000, seed=0):
            worst[f"{name}:{axiom}"] = err
    elapsed = time.perf_counter() - t0
    w = max(worst.values())
    ok = w < 1e-12 and elapsed < 5.0
    criterion(1, "group axioms on 1e4 samples", ok, f"worst {w:.1e}, {elapsed:.2f} s")
    assert ok, worst


def test_02_exact_exponential(criterion):
    t = np.random.default_rng(0).uniform(-100, 100, 1000)
    E = KOL.E(t)
    ref = np.zeros((1000, 2, 2))
    ref[:, 0, 0] = ref[:, 1, 1] = 1.0
    ref[:, 1, 0] = -t
    err = float(np.abs(E - ref).max())
    ok = err == 0.0
    criterion(2, "E(t) = [[1,0],[-t,1]] for 1e3 t", ok, f"max error {err:.1e}")
    assert ok


def test_03_covariance(criterion):
    quad = FundamentalSolution(KOL, CoefficientPath.closed_form(lambda t: np.ones(np.shape(t) + (1, 1)), 1, 1.0))
    worst = 0.0
    for tau in (1e-2, 1.0, 10.0):
        hand = np.array([[tau, -tau ** 2 / 2], [-tau ** 2 / 2, tau ** 3 / 3]])
        C = quad.covariance(tau, 0.0).C
        assert quad.covariance(tau, 0.0).method == "quadrature"
        worst = max(worst, float(np.max(np.abs(C - hand) / np.abs(hand))))
    hom = covariance_homogeneity_check(FundamentalSolution(KOL, ONE))["max_relative_error"]
    ok = worst < 1e-10 and hom < 1e-12
    criterion(3, "quadrature covariance and homogeneity", ok, f"{worst:.1e} / {hom:.1e}")
    assert ok


def test_04_normalization_and_heat(criterion):
    t0 = time.perf_counter()
    mass = deriv = 0.0
    for g, path in ((KOL, ONE), (CHAIN, PIECEWISE)):
        r = normalization_check(FundamentalSolution(g, path), n_samples=50, seed=0)
        mass, deriv = max(mass, r["mass_error"]), max(deriv, r["derivative_integral"])
    rng = np.random.default_rng(0)
    H = FundamentalSolution(HEAT1, ONE)
    x, y = rng.normal(size=(1000, 1)), rng.normal(size=(1000, 1))
    s = rng.uniform(-1, 1, 1000)
    t = s + np.exp(rng.uniform(-5, 2, 1000))
    ref = np.exp(-(x - y)[:, 0] ** 2 / (4 * (t - s))) / np.sqrt(4 * np.pi * (t - s))
    # relative agreement where exp() itself is not the source of rounding (the far tail)
    floor = np.exp(-30.0) / np.sqrt(4 * np.pi * (t - s))
    heat = float(np.max(np.abs(H(x, t, y, s) - ref) / np.maximum(ref, floor)))
    elapsed = time.perf_counter() - t0
    ok = mass < 1e-6 and deriv < 1e-6 and heat < 1e-13 and elapsed < 60
    criterion(4, "normalization, vanishing derivative integral, heat kernel", ok,
              f"{mass:.1e} / {deriv:.1e} / {heat:.1e}, {elapsed:.1f} s")
    assert ok


def test_05_hessian_and_pde_residual(criterion):
    hes = pde = 0.0
    for g, path in ((KOL, ONE), (CHAIN, PIECEWISE)):
        K = FundamentalSolution(g, path)
        hes = max(hes, hessian_fd_check(K, 1000, 0)["max_relative_error"])
        pde = max(pde, pde_residual_check(K, 200, 0)["max_relative_residual"])
    ok = hes < 1e-6 and pde < 1e-4
    criterion(5, "analytic Hessian vs FD, PDE residual", ok, f"{hes:.1e} / {pde:.1e}")
    assert ok


def test_06_cauchy_solver(criterion):
    t0 = time.perf_counter()
    m = ManufacturedSolution("(1 + x1 - x2^2)*exp(-x1^2 - x2^2)*(1 + t - t^2/2)", KOL, ONE)
    errs = refinement_ladder(m, 1.0, [-3, -3], [3, 3], (25, 25, 6),
                             [(31, 31, 5), (61, 61, 9), (121, 121, 17)],
                             src_box=([-6, -6], [6, 6]), trule=TimeRule(dtau=0.25))
    gw = Source(lambda x: window(x[..., 0], -12, 12, 1) * window(x[..., 1], -12, 12, 1),
                [-13, -13], [13, 13], has_time=False)
    u = solve_cauchy(CauchyProblem(KOL, ONE, 1.0, [-1, -1], [1, 1], (11, 11, 6), None, gw))
    const = float(np.abs(u.values - 1).max())
    elapsed = time.perf_counter() - t0
    ok = errs[-1] < 1e-3 and errs[0] > errs[1] > errs[2] and const < 1e-4 and elapsed < 300
    criterion(6, "manufactured recovery, refinement ladder, constant datum", ok,
              f"ladder {', '.join(f'{e:.1e}' for e in errs)}; constant {const:.1e}; {elapsed:.0f} s")
    assert ok


MANUFACTURED_BANK = [
    "(1 + x1 - x2^2)*exp(-x1^2 - x2^2)*bump(t, 0.5, 0.45)",
    "sin(2*x1)*exp(-x1^2 - 2*x2^2)*bump(t, 0.4, 0.35)",
    "x1*x2*exp(-2*x1^2 - x2^2)*bump(t, 0.6, 0.35)",
]


def test_07_representation_and_epsilon_rate(criterion):
    K = FundamentalSolution(KOL, ONE)
    G = GridFunction([-3, -3, 0], [3, 3, 1], np.zeros((25, 25, 11)))
    x, t = G.points()
    worst = 0.0
    for expr in MANUFACTURED_BANK:
        m = ManufacturedSolution(expr, KOL, ONE)
        T = apply_Tij(K, Source(m.lbar, [-5.5, -5.5, 0], [5.5, 5.5, 1]), 0, 0, G)
        exact = m.d2(0, 0)(x, t)
        worst = max(worst, float(np.linalg.norm(T.values - exact) / np.linalg.norm(exact)))
    # alpha = 1/2 source: |x1|^{1/2} near the kink
    f = Source(lambda x, t: np.sqrt(np.abs(x[..., 0])) * np.exp(-x[..., 0] ** 2 - x[..., 1] ** 2)
               * bump(t, 0.5, 0.45), [-5.5, -5.5, 0], [5.5, 5.5, 1], kinks=(0.0,))
    lad = epsilon_ladder(K, f, 0, 0, [1e-1, 1e-2, 1e-3, 1e-4], np.array([[0.0, 0.0], [0.05, 0.0]]), 0.5)
    ok = worst < 1e-2 and lad["slope"] >= 0.25 - 0.1
    criterion(7, "representation of d^2 u, truncation rate", ok,
              f"rel {worst:.1e}; slope {lad['slope']:.3f} >= 0.15")
    assert ok


def test_08_uniform_operator_norm(criterion):
    K = FundamentalSolution(KOL, ONE)
    bank = make_test_bank(KOL, 24, seed=0)
    G = GridFunction([-3, -3, 0], [3, 3, 1.2], np.zeros((33, 33, 13)))
    rep = empirical_operator_norm(K, 0, 0, [1e-1, 1e-2, 1e-3, 1e-4], bank, [2, 4], G)
    spread = {p: r["spread"] for p, r in rep["by_p"].items()}
    ok = all(v < 2 for v in spread.values())
    criterion(8, "eps-uniform ||T^eps||_{p->p} for p = 2, 4", ok,
              ", ".join(f"p={p:g}: spread {v:.3f}" for p, v in spread.items()))
    assert ok


def test_09_cancellation(criterion):
    rs = (1e-2, 1e-1, 1.0, 10.0)
    spreads = []
    for path in (ONE, PIECEWISE):
        K = FundamentalSolution(KOL, path)
        vals = np.array([cancellation_integrals(K, np.zeros(2), 1.0, r, -200.0) for r in rs])
        assert np.all(np.isfinite(vals)) and np.all(vals > 0)
        spreads += [vals[:, 0].max() / vals[:, 0].min(), vals[:, 1].max() / vals[:, 1].min()]
    # heat tail oracle: on R the region |x - y| >= rho gives -int d_xx G = rho/tau G(rho)
    H = FundamentalSolution(HEAT1, ONE)
    tail = 0.0
    for r, tau in [(1.0, 0.1), (1.0, 0.5), (0.3, 0.01), (5.0, 3.0)]:
        rho = r - np.sqrt(tau)
        ref = rho / tau * np.exp(-rho * rho / (4 * tau)) / np.sqrt(4 * np.pi * tau)
        tail = max(tail, abs(cancellation_inner(H, tau, 0.0, r, 0, 0) / ref - 1))
    ok = max(spreads) < 10 and tail < 1e-6
    criterion(9, "cancellation integrals uniform in r, heat tail oracle", ok,
              f"spread {max(spreads):.2f}; tail {tail:.1e}")
    assert ok


def test_10_maximal_machinery(criterion):
    G = GridFunction([-1.5, -1.5, 0], [1.5, 1.5, 1.2], np.zeros((15, 15, 13)))
    x, t = G.points()
    bank = [G.like(f(x, t)) for f in make_test_bank(KOL, 8, 0, [-1, -1], [1, 1], (0.1, 1.1))]
    radii = [0.15, 0.3, 0.6]
    full = maximal_bank_report(KOL, bank, radii)
    half = maximal_bank_report(KOL, bank[:4], radii)
    # stable: the bank constants move by less than 2x when the bank is halved
    stable = full["hl_max"] < 2 * half["hl_max"] and full["fs_max"] < 2 * half["fs_max"]
    dbl = doubling_witness(KOL, [0.1, 0.3, 1.0], [None, [0.3, -0.2, 0.5]], 400_000, 0)
    cov = covering_ladder(KOL, [2.0, 2.0, 1.0], [0.25, 0.5, 1.0], shape=(13, 13, 13))
    ok = (full["dominance_gap"] <= 0 and full["finite"] and stable and dbl["pass"]
          and cov["covered"] and cov["spread"] <= 2)
    criterion(10, "maximal dominance, bank ratios, doubling, covering", ok,
              f"gap {full['dominance_gap']:.1e}; HL {full['hl_max']:.2f}, FS {full['fs_max']:.2f}; "
              f"doubling max {max(r['ratio'] for r in dbl['rows']):.1f} vs {dbl['bound']:.0f}(1 + MC tol); "
              f"overlap {cov['overlap_bounds']}")
    assert ok


def _estimate_constants(shape):
    box = ([-1.5, -1.5, 0.0], [1.5, 1.5, 1.2])
    kap = KOL.kappa
    bank = make_u_bank(KOL, 3, 0, [-0.9, -0.9], [0.9, 0.9], (0.1, 1.1))
    osc = check_oscillation_bound(KOL, ONE, bank, [4 * kap, 8 * kap], 2.0, [0.5, 0.7], *box, shape,
                                  balls_per_radius=8, seed=0)
    coeff = lambda x, t: (1 + 0.3 * np.sin(x[..., 0]) * np.cos(t))[..., None, None]  # noqa: E731
    sob = check_sobolev_estimate(KOL, coeff, 0.5, bank, 2.0, *box, shape)
    return {"oscillation": osc["constant"], "sobolev": sob["constant"],
            "interpolation": sob["interp_constant"]}


def test_11_estimate_constants(criterion):
    base = _estimate_constants((17, 17, 13))
    again = _estimate_constants((17, 17, 13))
    fine = _estimate_constants((33, 33, 25))
    finite = all(np.isfinite(v) and v > 0 for v in base.values())
    repro = base == again
    drift = max(max(fine[k] / base[k], base[k] / fine[k]) for k in base)
    # baselines are recorded only from a run that is otherwise passing
    if (os.environ.get("KFP_UPDATE_BASELINES") or not BASELINES.exists()) and finite and repro and drift < 2:
        BASELINES.parent.mkdir(exist_ok=True)
        BASELINES.write_text(json.dumps(base, indent=2, sort_keys=True) + "\n")
    recorded = json.loads(BASELINES.read_text()) if BASELINES.exists() else base
    vs_base = max(max(base[k] / recorded[k], recorded[k] / base[k]) for k in base)
    ok = finite and repro and drift < 2 and vs_base < 2
    criterion(11, "oscillation, Sobolev, interpolation constants", ok,
              ", ".join(f"{k} {v:.3g}" for k, v in base.items())
              + f"; refinement drift {drift:.2f}; vs baseline {vs_base:.2f}")
    assert ok
