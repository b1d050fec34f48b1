"""Two-level iterative methods: spectral coarse spaces, perturbations and optimized prolongations."""
from .errors import (
    CoarseSpaceError,
    DegenerateCoarseSpaceError,
    EigensolverError,
    NumericalError,
    PoleError,
    PreconditionError,
    SingularPreconditionedSystemError,
    UnclassifiableCaseError,
    UnsupportedMetricError,
)
from .model_problem import (
    Eigensystem,
    GridProblem,
    JacobiSmoother,
    build_problem,
    build_smoother,
    eigensystem,
)
from .optimizer import OptimizationTrace, OptimizerConfig, objective, gradient, optimize, rademacher_probes
from .perturbation import (
    PerturbationCase,
    SimilarityForm,
    classify_case,
    lambda_closed_form,
    lambda_derivative,
    similarity_form,
    solve_epsilon_star,
    sweep_epsilon,
)
from .two_level import (
    CoarseSpace,
    MetricReport,
    TwoLevelOperator,
    assemble_T,
    energy_norm,
    mbar_check,
    metric_report,
    preconditioned_condition,
    spectral_coarse_space,
    spectral_coarse_space_choices,
    spectral_radius,
)

__version__ = "0.1.0"
