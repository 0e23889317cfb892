"""Maximal functions, coverings and the a priori estimates on a grid.

Balls are metric balls of the quasidistance; averages are means over the
grid nodes inside a ball.  The reported constants are empirical sups over a
bank of test functions, meant to be tracked under refinement.
"""

import numpy as np

from kfp import (BlockStructure, CoefficientPath, GridFunction, Group, build_covering,
                 check_oscillation_bound, check_sobolev_estimate, maximal_functions)
from kfp.maximal import covering_ladder, doubling_witness, make_u_bank, vmo_modulus

kol = Group(BlockStructure.kolmogorov())
G = GridFunction([-1.5, -1.5, 0], [1.5, 1.5, 1.2], np.zeros((15, 15, 13)))
x, t = G.points()

f = G.like(np.sign(x[..., 0]) * np.exp(-np.sum(x ** 2, -1)) * np.cos(3 * t))
M, S = maximal_functions(kol, f, [0.15, 0.3, 0.6])
print(f"min (Mf - |f|) = {np.min(M.values - np.abs(f.values)):.1e} (never negative)")
print(f"||Mf||_2 / ||f||_2 = {M.lp_norm(2) / f.lp_norm(2):.3f}, "
      f"||f||_2 / ||f#||_2 = {f.lp_norm(2) / S.lp_norm(2):.3f}")

# the jump across x1 = 0 keeps the partial oscillation in x away from zero
eta = vmo_modulus(kol, f, [0.3, 0.45, 0.6])
print("eta_f(r) =", np.round(eta.eta, 4))

dbl = doubling_witness(kol, [0.1, 1.0], mc_samples=200_000)
print("|B_2r| / |B_r| =", [round(r["ratio"], 2) for r in dbl["rows"]], f"(exact {dbl['bound']:.0f})")

fam = build_covering(kol, [-1, -1, 0], [1, 1, 1], 1.0, H=2.0, shape=(11, 11, 11))
print(f"covering: {len(fam.centers)} balls of radius 1, overlap of the dilated balls <= {fam.overlap_bound}")
lad = covering_ladder(kol, [2.0, 2.0, 1.0], [0.25, 0.5, 1.0], shape=(13, 13, 13))
print("overlap bounds along an R-ladder:", lad["overlap_bounds"])

one = CoefficientPath.constant_alpha(1.0, 1)
bank = make_u_bank(kol, 3, 0, [-0.9, -0.9], [0.9, 0.9], (0.1, 1.1))
box = ([-1.5, -1.5, 0], [1.5, 1.5, 1.2])
osc = check_oscillation_bound(kol, one, bank, [4 * kol.kappa, 8 * kol.kappa], 2.0, [0.5, 0.7], *box,
                              (17, 17, 13))
print(f"mean-oscillation constant {osc['constant']:.3g}")


def coeff(x, t):
    return (1 + 0.3 * np.sin(x[..., 0]) * np.cos(t))[..., None, None]


for shape in ((17, 17, 13), (33, 33, 25)):
    sob = check_sobolev_estimate(kol, coeff, 0.5, bank, 2.0, *box, shape, lam_ladder=[0, 10, 100])
    print(f"grid {shape}: W^2,p constant {sob['constant']:.3f}, interpolation {sob['interp_constant']:.3f}, "
          f"damped {np.round(sob['damped_constant'], 3)}")
