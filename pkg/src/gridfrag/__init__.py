"""Bayesian hierarchical fragility models for populations of grid components."""

from .errors import (
    ContractError,
    DataError,
    DegenerateFitError,
    GridFragError,
    MissingPrerequisiteError,
    NoInformationError,
    ParseError,
    PriorConstructionError,
    SamplerDegenerateWarning,
    UnderflowError,
    ValidationError,
)
from .evaluation import (
    PredictiveDistribution,
    kl_divergence,
    predictive_failure_distribution,
    signed_pointwise_divergence,
)
from .fragility import FragilityParams, failure_probability, system_failure_rate
from .inference import (
    EmpiricalPrior,
    LogLikelihoodContext,
    PosteriorChain,
    bootstrap_prior,
    fit_mle,
    log_likelihood,
    posterior_summary,
    run_metropolis_hastings,
)
from .policy import RiskTarget, UpgradePlan, exceedance_probability, solve_upgrade_threshold, upgrade_count
from .population import ComponentPopulation, FailureRecord, PopulationSpec, draw_population, simulate_failures
from .selection import CandidateModel, bic_score, fit_candidate, marginal_likelihood_mc, select_model
from .stress import StressDistribution, StressSeries, fit_stress_distribution, load_stress_csv, synthesize_stress

__version__ = "0.1.0"
