"""Causal graph recovery from rescaled environments.

Generates multi-environment SCM data, estimates scores and Hessians of the
observed log-density, and recovers the support of the inverse mixing Jacobian
(hence the causal DAG) by diagonalizing summed Hessian differences taken at
the observation generated from the source mean.
"""

from .data import MultiEnvDataset, generate_dataset, load_dataset, save_dataset, truth_dag
from .discovery import (
    DiscoveryConfig,
    DiscoveryError,
    MeanPairing,
    OracleEstimator,
    SupportEstimate,
    discover,
    extract_scaled_permutation,
    hessian_differences,
    locate_mean,
    pair_observations,
    resolve_permutation,
    similarity_matrix,
    support_threshold,
)
from .experiments import (
    EstimatorSpec,
    ResultRow,
    Scenario,
    assumption_report,
    build_model_and_env,
    inject_point,
    load_scenario,
    oracle_validate,
    run_scenario,
    summarize_rows,
)
from .graphs import Dag, chain_dag, ground_truth_support, random_dag, shd, single_edge_dag
from .oracle import (
    HessianIdentityResult,
    OmegaPair,
    RatioReport,
    VariabilityReport,
    check_distinct_ratios,
    check_sufficient_variability,
    log_density_x,
    omega_matrices,
    oracle_hessian,
    oracle_score,
    score_difference_sum,
    verify_lemma_hessian_identity,
)
from .scm import (
    EnvironmentSet,
    InversionError,
    MechanismDomainError,
    Mechanism,
    ScmModel,
    SingularJacobianError,
    SourceSpec,
    analytic_inverse_jacobian,
    forward_jacobian,
    invert_mixing,
    make_mechanism,
    make_rng,
    mix,
    sample_sources,
)
from .stein import (
    DegenerateDataError,
    ScoreHessianField,
    SteinConfig,
    estimate_field,
    stein_hessian,
    stein_score,
)

__version__ = "0.1.0"
