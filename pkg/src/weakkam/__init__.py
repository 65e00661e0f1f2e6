"""weakkam: numerical weak-KAM toolkit on the torus.

Computes ergodic (additive eigenvalue) constants and stationary solutions of
Hamilton-Jacobi equations, Mather measures by linear programming and by the
adjoint-transport route, the critical distance d(x,y), large-time asymptotic
profiles, and runs comparison-theorem verification suites on all of them.
"""

from .grid import TorusGrid, GridFunction, VelocityGrid, diff, laplacian, integrate
from .hamiltonian import (
    HamiltonianModel, TrigPoly, DiffusionCoefficient, ModelAudit,
    eval_H, eval_DpH, eval_DxH, eval_L, legendre_numeric,
    critical_p_interval, lipschitz_bound, audit_model,
    load_model, dump_model, pendulum, double_well, flat,
)
from .hj_solver import (
    SchemeConfig, ErgodicSolution, EvolutionResult, RegularizedResult,
    step, solve_cauchy, ergodic_solve, solve_regularized,
)
from .adjoint import (
    AdjointTrajectory, DiscreteMeasure, solve_adjoint, build_measure,
    comparison_functional, holonomy_residual, default_velocity_grid,
)
from .mather_lp import (
    HolonomicLP, MatherResult, build_lp, solve_lp, projected_mather_set,
    mather_set_union,
)
from .metric import (
    CriticalPotential, DistanceBank, distance_1d, distance_field,
    distance_matrix, distance_bank, maximal_subsolution, is_subsolution,
)
from .profile import (
    ProfileReport, profile_direct, profile_formula, check_lemma31,
    compare_profiles,
)
from .uniqueness import (
    BoundaryAssignment, ComparisonReport, solution_from_boundary,
    check_comparison, randomized_theorem_test,
)

__version__ = "0.1.0"
