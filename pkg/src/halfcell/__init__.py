"""Periodic homogenization with oblique boundary conditions on half-space cells.

Ergodic constants of interior and boundary cell problems, effective
coefficients, two-scale convergence studies, Monte Carlo cross-checks and
tilted half-space averages, all on monotone finite-difference schemes.
"""

__version__ = "0.1.0"

from .boundary import MuResult, mu_limit, verify_mu
from .correctors import EffectiveData, effective_boundary, effective_interior
from .expr import evaluate, parse
from .grids import StripGrid, TorusGrid
from .halfspace import boundary_average, slope_scan
from .homogenize import TwoScaleProblem, convergence_study
from .interior import e1_criterion, lambda_torus
from .model import (HJB, HalfStrip, Linear, LinearOblique, NonlinearHomogeneous, PucciMinus,
                    Semilinear, audit_assumptions)
from .montecarlo import lemma31_check, mu_mc_estimate, simulate_reflected

__all__ = [
    "__version__",
    "parse", "evaluate",
    "Linear", "HJB", "PucciMinus", "Semilinear", "LinearOblique", "NonlinearHomogeneous",
    "HalfStrip", "audit_assumptions",
    "TorusGrid", "StripGrid",
    "lambda_torus", "e1_criterion",
    "mu_limit", "verify_mu", "MuResult",
    "EffectiveData", "effective_interior", "effective_boundary",
    "TwoScaleProblem", "convergence_study",
    "simulate_reflected", "mu_mc_estimate", "lemma31_check",
    "boundary_average", "slope_scan",
]
