"""Second derivatives as singular integrals.

For compactly supported u, d_ij u = T_ij(L u), where T_ij integrates L u
against d_ij Gamma in the principal-value sense.  T_ij^eps cuts the kernel off
smoothly where t - s < eps; its norm on L^p should not depend on eps.
"""

import numpy as np

from kfp import (BlockStructure, CoefficientPath, FundamentalSolution, GridFunction, Group,
                 ManufacturedSolution, Source, empirical_operator_norm, make_test_bank)
from kfp.grid import bump
from kfp.singular import epsilon_ladder, truncation_ladder

kol = Group(BlockStructure.kolmogorov())
K = FundamentalSolution(kol, CoefficientPath.constant_alpha(1.0, 1))

m = ManufacturedSolution("(1 + x1 - x2^2)*exp(-x1^2 - x2^2)*bump(t, 0.5, 0.45)", kol, K.path)
src = Source(m.lbar, [-5.5, -5.5, 0], [5.5, 5.5, 1])
G = GridFunction([-3, -3, 0], [3, 3, 1], np.zeros((25, 25, 11)))
x, t = G.points()
exact = m.d2(0, 0)(x, t)
T, Te = truncation_ladder(K, src, 0, 0, [1e-1, 1e-2, 1e-3, 1e-4], G)
rel = np.linalg.norm(T.values - exact) / np.linalg.norm(exact)
print(f"||d11 u - T_11(L u)|| / ||d11 u|| = {rel:.2e}")
for eps, Tk in zip([1e-1, 1e-2, 1e-3, 1e-4], Te):
    print(f"  eps = {eps:.0e}: ||T - T^eps|| / ||T|| = "
          f"{np.linalg.norm(T.values - Tk.values) / np.linalg.norm(T.values):.2e}")

# for a source that is only C^{1/2} in x1 the gap decays like eps^{1/4} or faster
f = Source(lambda x, t: np.sqrt(np.abs(x[..., 0])) * np.exp(-x[..., 0] ** 2 - x[..., 1] ** 2)
           * bump(t, 0.5, 0.45), [-5.5, -5.5, 0], [5.5, 5.5, 1], kinks=(0.0,))
lad = epsilon_ladder(K, f, 0, 0, [1e-1, 1e-2, 1e-3], np.array([[0.0, 0.0], [0.05, 0.0]]), 0.5)
print(f"Hoelder source: sup |T - T^eps| slope {lad['slope']:.3f} on log-log")

# empirical operator norms over a random bank of bumps and wave packets
bank = make_test_bank(kol, 8, seed=0)
grid = GridFunction([-3, -3, 0], [3, 3, 1.2], np.zeros((33, 33, 13)))
rep = empirical_operator_norm(K, 0, 0, [1e-1, 1e-2, 1e-3, 1e-4], bank, [2, 4], grid)
for p, row in rep["by_p"].items():
    print(f"p = {p:g}: max ||T^eps f|| / ||f|| per eps = {np.round(row['max_ratio'], 3)}, "
          f"spread {row['spread']:.3f}")
