"""Off-policy return-based operators (Retrace, tree-backup, Q^pi(lambda), IS) on tabular MDPs."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    NumericalError,
    ResourceError,
    RetraceError,
    StructuralError,
)
from .mdp import (
    Mdp,
    bellman_operator,
    bellman_optimality_operator,
    exact_q_pi,
    exact_q_star,
    format_mdp,
    lambda_return_operator,
    load_mdp,
    parse_mdp,
    transition_operator,
)
from .traces import (
    ContractionReport,
    TraceFamily,
    TraceSpec,
    apply_expected_operator,
    apply_expected_operator_nonmarkov,
    contraction_diagnostics,
    control_matrix_A,
    trace_coefficient,
    trace_matrix,
)
from .generators import GarnetParams, generate_chain, generate_garnet
from .online import (
    PolicySchedule,
    StepSizeSchedule,
    Trajectory,
    epsilon_greedy,
    every_visit_update,
    mixture_behavior,
    run_control,
    sample_trajectory,
    softmax_policy,
)
from .analysis import (
    ScoreTable,
    commutation_defect,
    greediness_gap,
    inter_algorithm_scores,
    offpolicyness,
    qpi_lambda_safety,
    spectral_radius_qpi,
    trace_product_variance,
    verify_contraction,
)

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "NumericalError",
    "ResourceError",
    "RetraceError",
    "StructuralError",
    "Mdp",
    "bellman_operator",
    "bellman_optimality_operator",
    "exact_q_pi",
    "exact_q_star",
    "format_mdp",
    "lambda_return_operator",
    "load_mdp",
    "parse_mdp",
    "transition_operator",
    "ContractionReport",
    "TraceFamily",
    "TraceSpec",
    "apply_expected_operator",
    "apply_expected_operator_nonmarkov",
    "contraction_diagnostics",
    "control_matrix_A",
    "trace_coefficient",
    "trace_matrix",
    "PolicySchedule",
    "StepSizeSchedule",
    "Trajectory",
    "epsilon_greedy",
    "every_visit_update",
    "mixture_behavior",
    "run_control",
    "sample_trajectory",
    "softmax_policy",
    "ScoreTable",
    "commutation_defect",
    "greediness_gap",
    "inter_algorithm_scores",
    "offpolicyness",
    "qpi_lambda_safety",
    "spectral_radius_qpi",
    "trace_product_variance",
    "verify_contraction",
    "GarnetParams",
    "generate_chain",
    "generate_garnet",
]
