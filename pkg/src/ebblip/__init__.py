"""Empirical Bayes meta-priors for Bayesian probit models and layout bandits."""

from .bandit import (
    BanditState,
    EBConfig,
    RegretBoundParams,
    hill_climb,
    instantaneous_regret,
    regret_bound,
    regret_constants,
    run_bandit,
    select_random,
    thompson_select,
)
from .features import BIAS, FIRST_ORDER, SECOND_ORDER, FeatureSchema, LayoutSpace, encode_layout, encode_tabular
from .harness import (
    MetricsSeries,
    ScenarioSpec,
    export_metrics,
    log_loss,
    run_bandit_ab,
    run_scenario,
    run_scenarios,
    run_tau_sweep,
)
from .lasso import LassoConfig, adaptive_lasso_prune
from .meta_prior import (
    BootstrapConfig,
    CategoryMetaPrior,
    DegeneratePriorError,
    InsufficientTrafficError,
    bias_of_estimator,
    bootstrap_until_viable,
    estimate_meta_prior,
    tau_sq_hat,
)
from .probit import BlipModel, NumericalError, PriorConfig, WeightPosterior, probit_cdf
from .simulate import (
    Environment,
    EnvironmentSpec,
    generate_environment,
    generate_supervised_stream,
    ingest_csv,
    sample_reward,
)

__version__ = "0.1.0"
