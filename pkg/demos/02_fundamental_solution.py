"""The Gaussian fundamental solution of the model operator.

With coefficients a(t) depending on time only, Gamma(x, t; y, s) is a
Gaussian in x - E(t - s) y with covariance
C(t, s) = int_s^t E(t - r) A(r) E(t - r)^T dr (A the q x q block padded by zeros).
"""

import numpy as np

from kfp import BlockStructure, CoefficientPath, FundamentalSolution, Group
from kfp.fundamental import hessian_fd_check, normalization_check, pde_residual_check

kol = Group(BlockStructure.kolmogorov())
K = FundamentalSolution(kol, CoefficientPath.constant_alpha(1.0, 1))

# for a = 1 the covariance is known in closed form
tau = 2.0
print("C(tau) =\n", K.covariance(tau, 0.0).C)
print("hand   =\n", np.array([[tau, -tau ** 2 / 2], [-tau ** 2 / 2, tau ** 3 / 3]]))

# values and the diffusive Hessian in one call
ev = K.gamma((np.array([0.4, -0.1]), 1.0), (np.zeros(2), 0.0))
print(f"Gamma = {ev.value:.6e}, d11 Gamma = {ev.hess_x[0, 0]:.6e}")

# a coefficient that jumps at t = 0.5: the covariance integral is split exactly there
jump = FundamentalSolution(kol, CoefficientPath.piecewise_constant([0.5], [[[1.0]], [[3.0]]]))
print("piecewise C(1, 0) =\n", jump.covariance(1.0, 0.0).C)

for name, kernel in (("constant", K), ("piecewise", jump)):
    norm = normalization_check(kernel, n_samples=20, seed=0)
    hes = hessian_fd_check(kernel, 200, seed=0)
    pde = pde_residual_check(kernel, 100, seed=0)
    print(f"{name:>9s}: |int Gamma - 1| = {norm['mass_error']:.1e}, "
          f"|int D Gamma| = {norm['derivative_integral']:.1e}, "
          f"Hessian vs FD = {hes['max_relative_error']:.1e}, "
          f"PDE residual = {pde['max_relative_residual']:.1e}")
