"""Symbolic-numeric asymptotic diagonalization of linear ODE systems.

The package reduces Z' = rho(x) (D + R(x)) Z through a chain of explicit
near-identity transformations, tracks every discarded term symbolically,
and turns the terminal ledger into a certified rational bound on the
remaining error operator. A high-precision Runge-Kutta oracle and CLI
front end round out the numeric side.
"""

from .bounds import BoundReport, atom_norm, bound_curve, bound_expr
from .diagflow import (FunMatrix, PipelineRun, Scenario, StageState, builtin_C,
                       init_scenario, load_scenario, resolve_scenario,
                       roots_of_unity, run_pipeline)
from .errors import AsymptError, GradingError, InputError, RigorError
from .grading import SigmaLattice, as_exponent, build_lattice, default_K, format_exponent
from .ncalg import NCExpr, NCSymbol, NCTerm, StagePlan, expand_with, nc_atom, derive_stage_plan
from .scalar import EvalContext, FModel, Qi, ScalarExpr, float_up
from .solve import (AsymSolution, OracleRun, asymptotic_solution, back_transform,
                    decay_fit, exponent_integral, max_entry, ode_oracle,
                    residual_matrix)

__version__ = "0.1.0"

__all__ = [
    "AsymptError", "GradingError", "InputError", "RigorError",
    "SigmaLattice", "build_lattice", "default_K", "as_exponent", "format_exponent",
    "Qi", "ScalarExpr", "FModel", "EvalContext", "float_up",
    "NCSymbol", "NCTerm", "NCExpr", "StagePlan", "nc_atom", "expand_with",
    "derive_stage_plan",
    "FunMatrix", "Scenario", "StageState", "PipelineRun",
    "roots_of_unity", "builtin_C", "load_scenario", "resolve_scenario",
    "init_scenario", "run_pipeline",
    "atom_norm", "bound_expr", "bound_curve", "BoundReport",
    "back_transform", "exponent_integral", "asymptotic_solution", "AsymSolution",
    "residual_matrix", "max_entry", "decay_fit", "ode_oracle", "OracleRun",
    "__version__",
]
