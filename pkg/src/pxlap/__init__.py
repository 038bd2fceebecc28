"""Mixed Laplacian / p-Laplacian concave-convex problems on structured grids."""

__version__ = "0.1.0"

from .mesh import DomainSpec, Grid, GridError, build_grid, constant_field, zero_field
from .energy import EnergyVariant, NormReport, norms, truncation_h
from .solvers import (IterationOutcome, SolverError, SolverParams, build_subsolution,
                      build_supersolution_small_lambda, minimize_truncated, monotone_iteration,
                      solve_auxiliary, solve_plaplacian_sublinear)
from .mountain_pass import MPOutcome, MPParams, default_peak, mountain_pass
from .blowup import BlowupReport, parabolic_blowup
from .branches import (BranchTable, LambdaStarEstimate, bifurcation_scan, estimate_lambda_star,
                       verify_suite)
