"""Numerical toolkit for degenerate Kolmogorov-Fokker-Planck operators.

Modules
-------
geometry     translations, dilations, quasidistance and ball volumes
fundamental  the Gaussian fundamental solution of the model operator
cauchy       Duhamel solver for the Cauchy problem
singular     truncated singular integrals T_ij^eps and their empirical norms
maximal      maximal functions, coverings and the a priori estimate checks
cli          the ``kfp`` command line tool
"""

from .cauchy import CauchyProblem, refinement_ladder, solve_cauchy
from .expr import Expression, ManufacturedSolution
from .fundamental import CoefficientPath, Covariance, FundamentalSolution, KernelEval
from .geometry import (BlockStructure, GeometryInfo, Group, Point, axiom_suite,
                       estimate_ball_constant, estimate_kappa, unit_ball_volume,
                       validate_structure)
from .grid import GridFunction, Source
from .maximal import (build_covering, check_oscillation_bound, check_sobolev_estimate,
                      hl_maximal, maximal_functions, sharp_maximal)
from .singular import (TruncationProfile, apply_Tij, apply_Tij_eps, empirical_operator_norm,
                       make_test_bank)

__version__ = "0.1.0"

__all__ = [
    "BlockStructure", "CauchyProblem", "CoefficientPath", "Covariance", "Expression",
    "FundamentalSolution", "GeometryInfo", "GridFunction", "Group", "KernelEval",
    "ManufacturedSolution", "Point", "Source", "TruncationProfile", "apply_Tij", "apply_Tij_eps",
    "axiom_suite", "build_covering", "check_oscillation_bound", "check_sobolev_estimate",
    "empirical_operator_norm", "estimate_ball_constant", "estimate_kappa", "hl_maximal",
    "make_test_bank", "maximal_functions", "refinement_ladder", "sharp_maximal", "solve_cauchy",
    "unit_ball_volume", "validate_structure",
]
