"""Long-run portfolio choice in incomplete diffusion markets."""

from .closed_form import CirSolution, Measure, OuSolution, measure_dynamics, solve_cir, solve_ou_1d
from .eigen1d import (
    Eigen1dProblem,
    Eigen1dSolution,
    GridConfig,
    cel_decay_constant,
    feller_tightness_test,
    principal_eigenvalue,
)
from .errors import LongRunError
from .horizon import (
    HorizonCurve,
    break_even_horizon,
    cel_curve,
    expected_power_utility_affine,
    finite_horizon_bounds,
)
from .model import (
    CirModel,
    KimOmbergModel,
    LinearDiffusionModel,
    Policy,
    PolicyKind,
    Preferences,
    delta_of,
    evaluate_policy,
    long_run_policy,
    make_preferences,
    myopic_policy,
)
from .optimality import (
    OptimalityVerdict,
    VerdictStatus,
    check_cir,
    check_ou_general,
    check_ou_kappa,
    check_rho_region,
    validate_assumptions,
)
from .riccati import ValueSolution, solve_linear, solve_riccati
from .simulate import McEstimate, SimConfig, mc_estimate, sample_state_terminal, simulate_wealth_and_sdf

__all__ = [
    "CirModel",
    "CirSolution",
    "Eigen1dProblem",
    "Eigen1dSolution",
    "GridConfig",
    "HorizonCurve",
    "KimOmbergModel",
    "LinearDiffusionModel",
    "LongRunError",
    "McEstimate",
    "Measure",
    "OptimalityVerdict",
    "OuSolution",
    "Policy",
    "PolicyKind",
    "Preferences",
    "SimConfig",
    "ValueSolution",
    "VerdictStatus",
    "break_even_horizon",
    "cel_curve",
    "cel_decay_constant",
    "check_cir",
    "check_ou_general",
    "check_ou_kappa",
    "check_rho_region",
    "delta_of",
    "evaluate_policy",
    "expected_power_utility_affine",
    "feller_tightness_test",
    "finite_horizon_bounds",
    "long_run_policy",
    "make_preferences",
    "mc_estimate",
    "measure_dynamics",
    "myopic_policy",
    "principal_eigenvalue",
    "sample_state_terminal",
    "simulate_wealth_and_sdf",
    "solve_cir",
    "solve_linear",
    "solve_ou_1d",
    "solve_riccati",
    "validate_assumptions",
]
