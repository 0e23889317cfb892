"""Command line entry point: ``kfp {geometry,gamma,solve,singular,estimate,verify}``.

Every subcommand reads an operator file (TOML or JSON, see :mod:`kfp.config`),
writes its artifacts to ``--out`` and prints a short summary.  Reports are
JSON documents of the form::

    {"schema": "kfp-report/1", "tool": "kfp", "version": ..., "command": ...,
     "spec_hash": ..., "seed": ..., "checks": [...], "pass": ..., "payload": {...},
     "timing": {...}}

Each entry of ``checks`` is ``{check, samples, worst_case, tolerance, pass}``.
Only ``timing`` depends on the run; everything else is a function of the
configuration and the seed.

Exit status: 0 when every check passes, 1 when some check fails, 2 on
configuration, validation or I/O errors.  ``KFP_THREADS`` caps the number of
BLAS/OpenMP threads.

Gamma CSV columns: ``x1..xN, t, y1..yN, s, gamma, d2gamma_ij`` for
``1 <= i <= j <= q``.  Solution CSV columns: ``x1..xN, t, value``.
"""

import argparse
import json
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .cauchy import CauchyProblem, duhamel_residual, initial_trace_error, solve_cauchy
from .config import (load_config, operator_from_config, spec_hash, variable_coefficients)
from .errors import ConfigParse, IOFailure, KFPError
from .expr import Expression, ManufacturedSolution
from .fundamental import (check_gaussian_bound, convolution_identity_check,
                          covariance_homogeneity_check, hessian_fd_check, normalization_check,
                          pde_residual_check)
from .geometry import axiom_suite
from .grid import GridFunction, Source
from .maximal import (check_oscillation_bound, check_sobolev_estimate, coefficient_vmo,
                      covering_ladder, doubling_witness, make_u_bank, maximal_bank_report)
from .potentials import TimeRule
from .singular import empirical_operator_norm, make_test_bank

SCHEMA = "kfp-report/1"
CHECKS = ("maximal", "sharp", "vmo", "covering", "oscillation", "sobolev")

DEFAULT_TOLERANCES = {
    "axioms": 1e-12,
    "normalization": 1e-6,
    "derivative_integral": 1e-6,
    "hessian_fd": 1e-6,
    "pde_residual": 1e-4,
    "convolution": 1e-10,
    "covariance_homogeneity": 1e-12,
    "initial_trace": 1e-3,
    "duhamel_residual": 5e-2,
    "manufactured": 1e-3,
    "norm_spread": 2.0,
    "baseline_drift": 2.0,
    "covering_spread": 2.0,
}


# ------------------------------------------------------------------ helpers
def _check(name, worst, tol, samples=None, passed=None):
    worst = float(worst)
    ok = bool(np.isfinite(worst) and worst <= tol) if passed is None else bool(passed)
    return {"check": name, "samples": samples, "worst_case": worst, "tolerance": float(tol), "pass": ok}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


class Run:
    """Configuration, tolerances and output location shared by the subcommands."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config)
        self.seed = int(args.seed if args.seed is not None else self.cfg.get("seed", 0))
        self.group, self.path, self.kernel = operator_from_config(self.cfg, seed=self.seed)
        self.tol = dict(DEFAULT_TOLERANCES)
        self.tol.update({k: float(v) for k, v in self.cfg.get("tolerances", {}).items()})
        for item in args.tol or ():
            name, _, value = item.partition("=")
            try:
                self.tol[name.strip()] = float(value)
            except ValueError as exc:
                raise ConfigParse(f"bad tolerance override {item!r}") from exc
        bad = [k for k, v in self.tol.items() if not v > 0]
        if bad:
            raise ConfigParse(f"tolerances must be positive: {', '.join(bad)}")
        self.out = Path(args.out)
        self.t0 = time.perf_counter()

    def section(self, name):
        sec = self.cfg.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigParse(f"[{name}] must be a table")
        return sec

    def report(self, name, command, checks, payload):
        doc = {"schema": SCHEMA, "tool": "kfp", "version": __version__, "command": command,
               "spec_hash": spec_hash(self.cfg), "seed": self.seed, "checks": checks,
               "pass": all(c["pass"] for c in checks), "payload": _jsonable(payload),
               "timing": {"seconds": round(time.perf_counter() - self.t0, 3)}}
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            target = self.out / f"{name}.json"
            target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise IOFailure(f"cannot write report to {self.out}: {exc.strerror}") from exc
        for c in checks:
            print(f"  {c['check']:<28s} worst={c['worst_case']:.3e}  tol={c['tolerance']:.1e}  "
                  f"{'PASS' if c['pass'] else 'FAIL'}")
        print(f"{command}: {'PASS' if doc['pass'] else 'FAIL'}  ({target})")
        return doc


def _floats(text, name):
    if text is None:
        return None
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ConfigParse(f"--{name} expects comma-separated numbers") from exc


def _vec(sec, key, n, default=None):
    v = sec.get(key, default)
    if v is None:
        raise ConfigParse(f"missing setting {key!r}")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 1 and n > 1:
        v = np.full(n, float(v[0]))
    if v.size != n:
        raise ConfigParse(f"{key!r} needs {n} entries, got {v.size}")
    return v


def _shape(sec, key, n, default):
    s = sec.get(key, default)
    s = [int(v) for v in np.atleast_1d(s)]
    if len(s) == 1 and n > 1:
        s = s * n
    if len(s) != n or min(s) < 2:
        raise ConfigParse(f"{key!r} needs {n} entries >= 2")
    return tuple(s)


# ------------------------------------------------------------- subcommands
def cmd_geometry(run):
    g = run.group
    info = g.info()
    res = axiom_suite(g, n=run.args.samples, seed=run.seed)
    print(f"N={g.N}  q={g.q}  exponents={info.exponents}  Q={info.Q}  Q+2={info.Qplus2}")
    print(f"omega={info.omega:.6g} (exact {g.omega_exact:.6g})  kappa={info.kappa:.4f}")
    checks = [_check(name, worst, run.tol["axioms"], run.args.samples) for name, worst, *_ in res]
    payload = {"info": info.to_dict(), "omega_exact": g.omega_exact, "axioms": res}
    return run.report("geometry", "geometry", checks, payload)


def cmd_gamma(run):
    a = run.args
    sec = run.section("gamma")
    N, q = run.group.N, run.group.q
    # command-line values override the [gamma] table
    for key in ("x_lower", "x_upper", "x_shape", "t", "y"):
        flag = getattr(a, key)
        if flag is not None:
            sec = {**sec, key: _floats(flag, key.replace("_", "-"))}
    lower, upper = _vec(sec, "x_lower", N, -1.0), _vec(sec, "x_upper", N, 1.0)
    shape = _shape(sec, "x_shape", N, 11)
    times = np.atleast_1d(np.asarray(sec.get("t", 1.0), dtype=float))
    y = _vec(sec, "y", N, 0.0)
    s = float(a.s if a.s is not None else sec.get("s", 0.0))
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(lower, upper, shape)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, N)
    x = np.repeat(mesh, times.size, axis=0)
    t = np.tile(times, mesh.shape[0])
    val, _, hess = run.kernel.derivatives(x, t, y, s)
    pairs = [(i, j) for i in range(q) for j in range(i, q)]
    cols = [x, t[:, None], np.broadcast_to(y, x.shape), np.full((x.shape[0], 1), s), val[:, None]]
    cols += [hess[:, i, j][:, None] for i, j in pairs]
    header = ([f"x{k + 1}" for k in range(N)] + ["t"] + [f"y{k + 1}" for k in range(N)]
              + ["s", "gamma"] + [f"d2gamma_{i + 1}{j + 1}" for i, j in pairs])
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        np.savetxt(run.out / "gamma.csv", np.hstack(cols), delimiter=",",
                   header=",".join(header), comments="", fmt="%.17g")
    except OSError as exc:
        raise IOFailure(f"cannot write gamma.csv: {exc.strerror}") from exc
    finite = bool(np.all(np.isfinite(val)) and np.all(np.isfinite(hess)))
    nonneg = float(max(0.0, -val.min()))
    checks = [_check("finite_values", 0.0 if finite else np.inf, 1.0, val.size),
              _check("nonnegative", nonneg, 1e-300, val.size, passed=nonneg == 0.0)]
    payload = {"rows": int(val.size), "columns": header, "csv": "gamma.csv",
               "max_gamma": float(val.max())}
    return run.report("gamma", "gamma", checks, payload)


def _source(spec, N, box_lo, box_hi, timed, T):
    """A Source from an expression string or a table {expression | csv, lower, upper}."""
    if spec is None:
        return None
    if isinstance(spec, str):
        spec = {"expression": spec}
    lo = np.asarray(spec.get("lower", box_lo), dtype=float)
    hi = np.asarray(spec.get("upper", box_hi), dtype=float)
    if "csv" in spec:
        try:
            return GridFunction.from_csv(spec["csv"], has_time=timed)
        except OSError as exc:
            raise IOFailure(f"cannot read {spec['csv']}: {exc}") from exc
    expr = Expression(spec["expression"], N)
    if timed:
        return Source(lambda x, t: expr(x, t), np.append(lo, 0.0), np.append(hi, T), True)
    return Source(lambda x: expr(x, 0.0), lo, hi, False)


def cmd_solve(run):
    sec = run.section("solve")
    N = run.group.N
    T = float(sec.get("T", 1.0))
    lower, upper = _vec(sec, "lower", N), _vec(sec, "upper", N)
    shape = _shape(sec, "shape", N + 1, None if "shape" not in sec else sec["shape"])
    src_lo = _vec(sec, "source_lower", N, list(lower))
    src_hi = _vec(sec, "source_upper", N, list(upper))
    lam = float(sec.get("lam", 0.0))
    f = _source(sec.get("f"), N, src_lo, src_hi, True, T)
    g = _source(sec.get("g"), N, src_lo, src_hi, False, T)
    if "exact" in sec and "f" not in sec and "g" not in sec:
        # manufactured data: f = (Lbar - lam) u and g = u(., 0)
        m = ManufacturedSolution(sec["exact"], run.group, run.path, lam)
        f = Source(m.lbar, np.append(src_lo, 0.0), np.append(src_hi, T), True)
        g = Source(lambda x: m.u(x, 0.0), src_lo, src_hi, False)
    trule = TimeRule(dtau=float(sec.get("time_step", 0.05)))
    prob = CauchyProblem(run.group, run.path, T, lower, upper, shape, f, g,
                         lam, trule)
    backend = run.args.backend or sec.get("backend", "spectral")
    u = solve_cauchy(prob, backend)
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        u.to_csv(run.out / "u.csv")
    except OSError as exc:
        raise IOFailure(f"cannot write u.csv: {exc.strerror}") from exc
    trace = initial_trace_error(prob, u)
    checks = [_check("initial_trace", trace, run.tol["initial_trace"], int(np.prod(shape[:-1])))]
    payload = {"shape": list(shape), "backend": backend, "csv": "u.csv",
               "norms": {"l2": u.lp_norm(2.0), "linf": u.lp_norm(np.inf)}}
    if f is not None:
        res = duhamel_residual(prob, u)
        payload["duhamel"] = res
        checks.append(_check("duhamel_residual", res["relative"], run.tol["duhamel_residual"],
                             int(np.prod(shape))))
    if "exact" in sec:
        ex = Expression(sec["exact"], N)
        x, t = u.points()
        ref = ex(x, t)
        err = float(np.abs(u.values - ref).max() / np.abs(ref).max())
        payload["manufactured_error"] = err
        checks.append(_check("manufactured", err, run.tol["manufactured"], int(np.prod(shape))))
    return run.report("solve", "solve", checks, payload)


def _grid_from(sec, N, lower=-1.5, upper=1.5, t_range=(0.0, 1.0), shape=17):
    lo = _vec(sec, "lower", N + 1, list(np.append(np.full(N, lower), t_range[0])))
    hi = _vec(sec, "upper", N + 1, list(np.append(np.full(N, upper), t_range[1])))
    sh = _shape(sec, "shape", N + 1, shape)
    return GridFunction(lo, hi, np.zeros(sh))


def cmd_singular(run):
    a = run.args
    sec = run.section("singular")
    g = run.group
    N = g.N
    i = int(a.i if a.i is not None else sec.get("i", 1)) - 1
    j = int(a.j if a.j is not None else sec.get("j", 1)) - 1
    eps = _floats(a.epsilon_ladder, "epsilon-ladder") or sec.get("epsilons", [1e-1, 1e-2, 1e-3, 1e-4])
    ps = _floats(a.p, "p") or np.atleast_1d(sec.get("p", [2.0, 4.0])).tolist()
    seed = int(a.bank_seed if a.bank_seed is not None else sec.get("bank_seed", run.seed))
    size = int(a.bank_size if a.bank_size is not None else sec.get("bank_size", 6))
    grid = _grid_from(sec, N, -3.0, 3.0, (0.0, 1.2), 33)
    bank = make_test_bank(g, size, seed, lower=grid.lower[:N] / 2, upper=grid.upper[:N] / 2)
    trule = TimeRule(dtau=float(sec.get("time_step", 0.05)))
    rep = empirical_operator_norm(run.kernel, i, j, eps, bank, ps, grid, trule)
    checks = []
    for p, r in rep["by_p"].items():
        r["slope"] = float(np.polyfit(np.log(eps), np.log(r["max_ratio"]), 1)[0])
        checks.append(_check(f"norm_spread_p{p:g}", r["spread"], run.tol["norm_spread"], size))
    rep["i"], rep["j"], rep["bank_seed"] = i + 1, j + 1, seed
    return run.report("singular", "singular", checks, rep)


def _baseline_checks(run, check, values):
    """Compare fitted constants with declared baselines (factor ``baseline_drift``)."""
    base = {}
    if run.args.baseline:
        try:
            base = json.loads(Path(run.args.baseline).read_text()).get(check, {})
        except OSError as exc:
            raise IOFailure(f"cannot read baseline {run.args.baseline}: {exc.strerror}") from exc
        except ValueError as exc:
            raise ConfigParse(f"baseline file is not JSON: {exc}") from exc
    base.update(run.section("estimate").get("baselines", {}).get(check, {}))
    out = []
    for key, ref in base.items():
        if key not in values:
            continue
        drift = max(values[key] / ref, ref / values[key]) if values[key] > 0 and ref > 0 else np.inf
        out.append(_check(f"baseline_{key}", drift, run.tol["baseline_drift"]))
    return out


def cmd_estimate(run):
    a = run.args
    sec = run.section("estimate")
    g = run.group
    N, q = g.N, g.q
    check = a.check or sec.get("check", "maximal")
    p = float((_floats(a.p, "p") or [sec.get("p", 2.0)])[0])
    ladder = _floats(a.ladder, "ladder")
    grid = _grid_from(sec, N, -1.5, 1.5, (0.0, 1.2), 13)
    lo, hi = grid.lower, grid.upper
    x, t = grid.points()
    bank_size = int(sec.get("bank_size", 4))
    values, checks, payload = {}, [], {"check": check}
    if check in ("maximal", "sharp"):
        radii = ladder or [0.15, 0.3, 0.6]
        bank = [grid.like(f(x, t)) for f in make_test_bank(g, bank_size, run.seed, lo[:N] * 0.7, hi[:N] * 0.7,
                                                            (lo[-1] + 0.1, hi[-1] - 0.1))]
        rep = maximal_bank_report(g, bank, radii, p)
        dbl = doubling_witness(g, radii, [None, list(0.5 * (lo + hi) + 0.1)], 50_000, run.seed)
        key = "hl" if check == "maximal" else "fs"
        values = {"constant": rep[f"{key}_max"]}
        checks += [_check("maximal_dominates", rep["dominance_gap"], 0.0, len(bank)),
                   _check(f"{key}_ratio_finite", rep[f"{key}_max"], np.inf, len(bank),
                          passed=rep["finite"]),
                   _check("doubling_excess", dbl["excess"], dbl["rel_tol"], len(dbl["rows"]),
                          passed=dbl["pass"])]
        payload.update(bank=rep, doubling=dbl)
    elif check == "vmo":
        radii = ladder or [0.1, 0.2, 0.3]
        func, _ = variable_coefficients(sec.get("coefficients", {"expressions": np.eye(q).tolist()}), q, N)
        rep = coefficient_vmo(g, func, grid, radii)
        mono = bool(np.all(np.diff(rep.eta) >= 0))
        values = {"constant": float(rep.eta[-1])}
        checks += [_check("vmo_bounded", rep.eta.max(), 2 * max(rep.sup_norm, 1e-300),
                          len(rep.radii), passed=mono and rep.eta.max() <= 2 * rep.sup_norm)]
        payload["vmo"] = rep
    elif check == "covering":
        radii = ladder or [0.25, 0.5, 1.0]
        half = sec.get("half_widths", [2.0] * N + [1.0])
        rep = covering_ladder(g, half, radii, float(sec.get("H", 2.0)),
                              tuple(sec.get("covering_shape", [13] * (N + 1))))
        fams = rep.pop("families")
        values = {"constant": float(max(rep["overlap_bounds"]))}
        checks += [_check("covering_spread", rep["spread"], run.tol["covering_spread"], len(fams),
                          passed=rep["covered"] and rep["spread"] <= run.tol["covering_spread"])]
        payload.update(covering=rep, families=[f.to_dict() for f in fams])
    elif check == "oscillation":
        r_ladder = ladder or [0.5, 0.7]
        kappa = g.kappa
        k_ladder = [4 * kappa, 8 * kappa, 16 * kappa]
        bank = make_u_bank(g, bank_size, run.seed, lo[:N] * 0.6, hi[:N] * 0.6, (lo[-1] + 0.1, hi[-1] - 0.1))
        rep = check_oscillation_bound(g, run.path, bank, k_ladder, p, r_ladder, lo, hi, grid.shape,
                                      seed=run.seed)
        rep.pop("rows")
        values = {"constant": rep["constant"]}
        checks += [_check("oscillation_finite", rep["constant"], np.inf, len(bank), passed=rep["finite"])]
        payload.update(oscillation=rep, bank=bank)
    elif check == "sobolev":
        func, nu = variable_coefficients(sec.get("coefficients", {"expressions": np.eye(q).tolist()}), q, N)
        lams = ladder or [0.0, 1.0, 10.0, 100.0]
        bank = make_u_bank(g, bank_size, run.seed, lo[:N] * 0.6, hi[:N] * 0.6, (lo[-1] + 0.1, hi[-1] - 0.1))
        rep = check_sobolev_estimate(g, func, nu, bank, p, lo, hi, grid.shape, lams)
        values = {"constant": rep["constant"], "interp_constant": rep["interp_constant"]}
        checks += [_check("sobolev_finite", rep["constant"], np.inf, len(bank), passed=rep["finite"])]
        payload.update(sobolev=rep, bank=bank)
    else:
        raise ConfigParse(f"unknown check {check!r}")
    checks += _baseline_checks(run, check, values)
    payload["constants"] = values
    return run.report(f"estimate_{check}", f"estimate --check {check}", checks, payload)


def _kernel_checks(run):
    k, tol = run.kernel, run.tol
    checks, payload = [], {}
    norm = normalization_check(k, 50, run.seed)
    checks.append(_check("normalization", norm["mass_error"], tol["normalization"], 50))
    checks.append(_check("derivative_integral", norm["derivative_integral"], tol["derivative_integral"], 50))
    hes = hessian_fd_check(k, 1000, run.seed)
    checks.append(_check("hessian_fd", hes["max_relative_error"], tol["hessian_fd"], 1000))
    pde = pde_residual_check(k, 200, run.seed)
    checks.append(_check("pde_residual", pde["max_relative_residual"], tol["pde_residual"], 200))
    if k.path.is_constant:
        conv = convolution_identity_check(k, 1000, run.seed)
        checks.append(_check("convolution", conv["max_relative_error"], tol["convolution"], 1000))
        hom = covariance_homogeneity_check(k)
        checks.append(_check("covariance_homogeneity", hom["max_relative_error"],
                             tol["covariance_homogeneity"], 3))
        payload.update(convolution=conv, homogeneity=hom)
    gb = check_gaussian_bound(k, 2000, run.seed)
    payload.update(normalization=norm, hessian=hes, pde=pde, gaussian_bound=gb)
    return checks, payload


def cmd_verify(run):
    target = run.args.target
    checks, payload = _kernel_checks(run)
    if target == "all":
        res = axiom_suite(run.group, n=10_000, seed=run.seed)
        checks = [_check(name, worst, run.tol["axioms"], 10_000) for name, worst, *_ in res] + checks
        N = run.group.N
        box = np.full(N, 12.0)
        one = Source(lambda x: np.ones(x.shape[:-1]), -box, box, False)
        prob = CauchyProblem(run.group, run.path, 0.5, -np.ones(N), np.ones(N), (9,) * N + (3,), None, one)
        u = solve_cauchy(prob, "pointwise")
        dev = float(np.abs(u.values[..., 1:] - 1).max())
        checks.append(_check("constant_datum", dev, 1e-4, u.values[..., 1:].size))
        payload["constant_datum"] = dev
    return run.report(f"verify_{target}", f"verify {target}", checks, payload)


# -------------------------------------------------------------------- parser
def build_parser():
    parser = argparse.ArgumentParser(prog="kfp", description="Kolmogorov-Fokker-Planck numerical toolkit")
    parser.add_argument("--version", action="version", version=f"kfp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="operator / run configuration (TOML or JSON)")
        p.add_argument("--out", default="kfp-out", help="output directory (default: kfp-out)")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default: config 'seed' or 0)")
        p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a tolerance")
        return p

    p = common(sub.add_parser("geometry", help="exponents, Q, omega, kappa and the axiom suite"))
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(func=cmd_geometry)

    p = common(sub.add_parser("gamma", help="evaluate Gamma and its Hessian on a grid (CSV)"))
    for name in ("x-lower", "x-upper", "x-shape", "t", "y"):
        p.add_argument(f"--{name}", help="comma-separated values")
    p.add_argument("--s", type=float, default=None)
    p.set_defaults(func=cmd_gamma)

    p = common(sub.add_parser("solve", help="solve the Cauchy problem described in [solve]"))
    p.add_argument("--backend", choices=("spectral", "pointwise"), default=None)
    p.set_defaults(func=cmd_solve)

    p = common(sub.add_parser("singular", help="empirical norms of the truncated operators"))
    p.add_argument("--i", type=int, default=None, help="first index (1-based, <= q)")
    p.add_argument("--j", type=int, default=None, help="second index (1-based, <= q)")
    p.add_argument("--epsilon-ladder", default=None)
    p.add_argument("--p", default=None)
    p.add_argument("--bank-seed", type=int, default=None)
    p.add_argument("--bank-size", type=int, default=None)
    p.set_defaults(func=cmd_singular)

    p = common(sub.add_parser("estimate", help="maximal-function and a priori estimate checks"))
    p.add_argument("--check", choices=CHECKS, default=None)
    p.add_argument("--p", default=None)
    p.add_argument("--ladder", default=None, help="radii (or lambdas for sobolev), comma-separated")
    p.add_argument("--baseline", default=None, help="JSON file of regression baselines")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("verify", help="property suites")
    p.add_argument("target", choices=("kernel", "all"))
    common(p).set_defaults(func=cmd_verify)
    return parser


def _thread_limit():
    value = os.environ.get("KFP_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError as exc:
        raise ConfigParse(f"KFP_THREADS must be a positive integer, got {value!r}") from exc
    if n < 1:
        raise ConfigParse("KFP_THREADS must be a positive integer")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            doc = args.func(Run(args))
    except KFPError as exc:
        print(f"kfp: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0 if doc["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
