"""Energy-conserving line integral methods for charged particle dynamics."""

from .boris import boris_integrate, boris_push, boris_step
from .harness import (
    Method,
    convergence_table,
    drift_series,
    generate_reference,
    parse_method,
    solution_error,
    symmetry_check,
)
from .legendre import (
    GaussRule,
    Tableau,
    build_tableau,
    gauss_rule,
    legendre_eval,
    legendre_integral,
    xs_closed_form,
)
from .lim import (
    ConvergenceError,
    IntegrationError,
    RunRecord,
    SolverConfig,
    StepReport,
    integrate,
    lim_step,
    psi_residual,
    solve,
    solve_blended_electric,
    solve_blended_magnetic,
    solve_fixed_point,
)
from .problems import (
    BUILTIN_PROBLEMS,
    CrossField,
    MatrixField,
    Problem,
    ProblemValidationError,
    State,
    apply_magnetic,
    builtin_problem,
    hamiltonian,
    invariants,
    validate_problem,
)

__version__ = "0.1.0"
