"""Translations, dilations and the quasidistance of the Kolmogorov group.

The operator d_11 + x1 d_2 - d_t has B = [[0, 0], [1, 0]], so E(t) = exp(-tB)
is the polynomial I - tB.  Points are (x, t) pairs; the group law is
(x, t) o (y, s) = (y + E(s) x, t + s).
"""

import numpy as np

from kfp import BlockStructure, Group, Point, axiom_suite, estimate_ball_constant

kol = Group(BlockStructure.kolmogorov())
info = kol.info()
print(f"exponents {info.exponents}, homogeneous dimension Q + 2 = {info.Qplus2}")
print("E(0.5) =\n", kol.E(0.5))

xi = Point(np.array([0.3, -1.0]), 0.4)
eta = Point(np.array([1.2, 0.5]), -0.2)
print("xi o eta  =", kol.compose(xi, eta))
print("xi^-1     =", kol.invert(xi))

# the quasidistance is 1-homogeneous under D(lam) = diag(lam, lam^3, lam^2)
d = kol.quasidistance(xi, eta)
for lam in (0.1, 1.0, 10.0):
    dl = kol.quasidistance(kol.dilate(lam, xi), kol.dilate(lam, eta))
    print(f"lam = {lam:5.1f}: d(D xi, D eta) / (lam d) = {dl / (lam * d):.15f}")

# every axiom on 10^4 random samples; columns are (name, worst relative error, ...)
for name, worst, *_ in axiom_suite(kol, n=10_000, seed=0):
    print(f"  {name:<24s} {worst:.2e}")

# |B_r| = omega r^{Q+2}: Monte Carlo against the exact constant
table = estimate_ball_constant(kol, [0.1, 1.0, 10.0], 200_000, seed=0)
print(f"omega (Monte Carlo) = {table.omega:.5f}, exact = {kol.omega_exact:.5f}")
