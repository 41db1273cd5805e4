"""Zero-order trajectory optimization with consensus particle dynamics.

Implements consensus-based particle optimization alongside the Gaussian
search baselines it is usually compared against (path-integral mean updates,
covariance adaptation, cross-entropy), desk-scale benchmark problems (the
penalized Himmelblau surface and a point-mass tunnel world), and diagnostics
that make the method's contraction and surrogate-improvement behavior
observable.
"""

from .core import (
    ControlTrajectory,
    CovarianceFactorizationError,
    Population,
    SoftmaxConfig,
    UnevaluatedPopulationError,
    WeightVector,
    best_particle,
    consensus_point,
    softmax_weights,
)
from .diagnostics import (
    DecayParams,
    SurrogateEstimate,
    check_lambda,
    empirical_fisher_gaussian_mean,
    gaussian_kl_same_cov,
    gaussian_kl_same_cov_mc,
    log_surrogate_mc,
    lyapunov_v,
    min_iterations_estimate,
    surrogate_mc,
)
from .optimizers import (
    CboParams,
    GaussianSearchState,
    IterationRow,
    RunRecord,
    StoppingRule,
    cbo_step,
    cbs_step,
    cem_update,
    cma_update,
    evaluate_population,
    mppi_update,
    run_cbo,
    run_gaussian_method,
    sample_gaussian_population,
)
from .pointmass import (
    EnvGenConfig,
    EnvironmentGenerationError,
    PointMassEnv,
    PointMassProblem,
    Rect,
    decompose_cost,
    default_env,
    generate_environment,
    in_tunnel,
    load_env,
    obstacle_hits,
    point_mass_rollout,
    point_mass_step,
    save_env,
)
from .problems import HimmelblauProblem, Problem, StagewiseProblem, himmelblau_penalized
from .rng import RngStream

__all__ = [
    "CboParams",
    "ControlTrajectory",
    "CovarianceFactorizationError",
    "DecayParams",
    "EnvGenConfig",
    "EnvironmentGenerationError",
    "GaussianSearchState",
    "HimmelblauProblem",
    "IterationRow",
    "PointMassEnv",
    "PointMassProblem",
    "Population",
    "Problem",
    "Rect",
    "RngStream",
    "RunRecord",
    "SoftmaxConfig",
    "StagewiseProblem",
    "StoppingRule",
    "SurrogateEstimate",
    "UnevaluatedPopulationError",
    "WeightVector",
    "best_particle",
    "cbo_step",
    "cbs_step",
    "cem_update",
    "check_lambda",
    "cma_update",
    "consensus_point",
    "decompose_cost",
    "default_env",
    "empirical_fisher_gaussian_mean",
    "evaluate_population",
    "gaussian_kl_same_cov",
    "gaussian_kl_same_cov_mc",
    "generate_environment",
    "himmelblau_penalized",
    "in_tunnel",
    "load_env",
    "log_surrogate_mc",
    "lyapunov_v",
    "min_iterations_estimate",
    "mppi_update",
    "obstacle_hits",
    "point_mass_rollout",
    "point_mass_step",
    "run_cbo",
    "run_gaussian_method",
    "sample_gaussian_population",
    "save_env",
    "softmax_weights",
    "surrogate_mc",
]
