"""Locality of linearly constrained, separable, strongly convex problems."""

from .analysis import (CRTrace, LocalityReport, bound_constant, conjugate_residuals, decay_bound,
                       locality_rate, locality_report, matrix_power_support, schur_apply,
                       schur_condition_number, sensitivity_apply, structural_krylov_support,
                       sufficient_rounds)
from .benchmarks import (ExperimentConfig, Instance, gen_dispatch, gen_rendezvous,
                         gen_state_estimation, run_experiment)
from .errors import (ConvergenceError, CRBreakdown, DimensionMismatch, LocalityError,
                     NoLocalityGuarantee, SingularSystemError)
from .graphs import (CouplingGraphs, build_graphs, constraints_within, khop, primal_dual_distance,
                     problem_graphs)
from .problem import (ConstrainedProblem, CustomBlock, QuadraticBlock, SeparableObjective, Solution,
                      eval_objective, gradient, hessian, quadratic, read_problem,
                      singular_values_extreme, solve_equality_constrained, solve_unconstrained,
                      write_problem)
from .protocol import (lazy_metropolis, message_bound_check, run_flooding,
                       run_projected_subgradient)
from .truncation import (extend_solution, induce_subproblem, khop_local_solution, solve_local,
                         truncation_error_profile)

__version__ = "0.1.0"
