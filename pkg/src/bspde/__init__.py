"""Spectral Galerkin / implicit backward Euler solver for backward stochastic
parabolic equations on an interval."""

from .basis import IntervalDomain, QuadratureRule, SpectralBasis, make_basis, project, reconstruct
from .catalog import CATALOG, build_problem, get_entry
from .cond_exp import GaussQuadrature, LeastSquares, cond_mean, cond_z
from .exceptions import BspdeError, DegenerateRegression, InvalidArgument, IterationFailure
from .harness import (ErrorReport, OracleSolution, converge_space, converge_time, error_norms,
                      oracle_linear, regularity_probe)
from .paths import PathEnsemble, TimeGrid, increments, load_ensemble, make_grid, sample_ensemble
from .problem import (BspdeProblem, Deterministic, Driver, WienerFunctional, probe_assumptions,
                      project_driver, project_terminal)
from .stepper import (BackwardEulerSolver, CoefficientProcess, StepperConfig, backward_step,
                      reconstruct_solution, solve_backward, solve_deterministic_ode)

__version__ = "0.1.0"
