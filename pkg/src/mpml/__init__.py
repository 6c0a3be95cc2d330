"""Mixed-precision multilevel Monte Carlo for an elliptic PDE with a lognormal coefficient."""

__version__ = "0.1.0"

from .cost_ledger import CostReceipt, charge_array, level_cost_ratio, predicted_gain
from .fp_formats import DOUBLE, FORMATS, HALF, Q43, SINGLE, FloatFormat, FormatOverflowError, fp_op, round_to
from .iterative_refinement import POLICIES, PrecisionPolicy, PrecisionQuad, ir_solve
from .multilevel_engine import (
    DecayRates,
    LmaxExceeded,
    RunResult,
    mse_experiment,
    optimal_samples,
    precision_schedule,
    run_adaptive,
    run_fixed,
)
from .pde_model import ModelProblem, RandomFieldParams, SolverSpec
from .sparse_linalg import BreakdownError, NoConvergence, SparseSpd, cholesky, minres

__all__ = [
    "__version__",
    "CostReceipt", "charge_array", "level_cost_ratio", "predicted_gain",
    "DOUBLE", "FORMATS", "HALF", "Q43", "SINGLE", "FloatFormat", "FormatOverflowError", "fp_op", "round_to",
    "POLICIES", "PrecisionPolicy", "PrecisionQuad", "ir_solve",
    "DecayRates", "LmaxExceeded", "RunResult", "mse_experiment", "optimal_samples", "precision_schedule",
    "run_adaptive", "run_fixed",
    "ModelProblem", "RandomFieldParams", "SolverSpec",
    "BreakdownError", "NoConvergence", "SparseSpd", "cholesky", "minres",
]
