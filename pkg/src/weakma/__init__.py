"""
Convex integration for very weak solutions of the two-dimensional
Monge-Ampere equation ``Det D^2 v = f`` on the unit square.
"""

from .corrugation import add_corrugation, corrugation_error, gamma, nash_decompose
from .elliptic import build_A, diagonalize, poisson_dirichlet
from .errors import *  # noqa: F401,F403
from .fields import (
    Grid,
    ScalarField2D,
    SymMatField2D,
    VectorField2D,
    curl_curl,
    gradient,
    holder_norm,
    holder_seminorm,
    matrix_sup_norm,
    mollify,
    sup_norm,
    sym_gradient,
)
from .iteration import SolutionBundle, StageReport, further_approximation, initial_approximation, solve, stage
from .schedule import ExponentConfig, check_admissible, make_schedule, minimal_a, select_exponents
from .verify import bending_family, convergence_report, deficit, distributional_residual

__version__ = "0.1.0"
