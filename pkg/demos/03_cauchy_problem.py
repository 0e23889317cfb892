"""Solving L u = f on (0, T) with u(., 0) = g by the Duhamel formula.

u(x, t) = int Gamma(x, t; y, 0) g(y) dy - int_0^t int Gamma(x, t; y, s) f(y, s) dy ds
for L = d_11 + x1 d_2 - d_t.  The data are sampled on an input grid,
interpolated by cubic splines and pushed through the kernel on a padded
FFT grid.
"""

import numpy as np

from kfp import (BlockStructure, CauchyProblem, CoefficientPath, Group, ManufacturedSolution,
                 Source, refinement_ladder, solve_cauchy)
from kfp.cauchy import duhamel_residual
from kfp.grid import window
from kfp.potentials import TimeRule

kol = Group(BlockStructure.kolmogorov())
one = CoefficientPath.constant_alpha(1.0, 1)

# a manufactured solution gives f and g in closed form
m = ManufacturedSolution("(1 + x1 - x2^2)*exp(-x1^2 - x2^2)*(1 + t - t^2/2)", kol, one)
errs = refinement_ladder(m, 1.0, [-3, -3], [3, 3], (25, 25, 6),
                         [(31, 31, 5), (61, 61, 9), (121, 121, 17)],
                         src_box=([-6, -6], [6, 6]), trule=TimeRule(dtau=0.25))
print("relative max error as the data grids are refined:", ", ".join(f"{e:.2e}" for e in errs))
print("observed orders:", np.round(np.log2(np.array(errs[:-1]) / errs[1:]), 2))

# the exact sources skip the interpolation step
f = Source(m.lbar, [-6, -6, 0], [6, 6, 1])
g = Source(lambda x: m.u(x, 0.0), [-6, -6], [6, 6], has_time=False)
prob = CauchyProblem(kol, one, 1.0, [-3, -3], [3, 3], (25, 25, 6), f, g, trule=TimeRule(dtau=0.25))
u = solve_cauchy(prob)
x, t = u.points()
print(f"exact sources: max error {np.abs(u.values - m.u(x, t)).max():.2e}")
print(f"finite-difference residual of L u - f: {duhamel_residual(prob, u)['relative']:.2e} (first order)")

# constant datum: mass conservation makes u = 1 wherever the transported
# Gaussian stays on the plateau of the window
wide = Source(lambda x: window(x[..., 0], -12, 12, 1) * window(x[..., 1], -12, 12, 1),
              [-13, -13], [13, 13], has_time=False)
u1 = solve_cauchy(CauchyProblem(kol, one, 1.0, [-1, -1], [1, 1], (11, 11, 6), None, wide))
print(f"constant datum: max |u - 1| = {np.abs(u1.values - 1).max():.2e}")
