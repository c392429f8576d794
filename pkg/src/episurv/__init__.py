"""Bayesian survival estimation for infection episodes seen through periodic tests.

Episodes are only known to start and end within intervals bounded by
negative tests, some episodes are missed entirely, and tests can return
false negatives. The package estimates the discrete-time survival curve of
episode durations under these conditions.
"""

from .core import (
    ConfigurationError,
    DetectionWeights,
    DomainError,
    EpisodeDataset,
    HazardVector,
    ObservedEpisode,
    StartWindow,
    TestSchedule,
    detection_weights,
    survival,
    survival_curve,
    tau,
    tau2,
)
from .estimator import DurationEstimator, ModelConfig, fit_posterior
from .likelihood import (
    LogPosterior,
    NTotPrior,
    SensitivityModel,
    detection_log_term,
    log_posterior,
    log_posterior_gradient,
    one_minus_piu,
    one_minus_piu_prime,
    one_minus_pu,
    p_ik,
    p_ik_prime,
)
from .priors import BetaProcessPrior, WeakHazardPrior, k_schedule
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, sample, summarize_survival
from .simulator import (
    SensitivityScenario,
    TruthDistribution,
    survey_schedules,
    geometric_with_bump,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "BetaProcessPrior",
    "ConfigurationError",
    "DetectionWeights",
    "DomainError",
    "DurationEstimator",
    "EpisodeDataset",
    "HazardVector",
    "LogPosterior",
    "ModelConfig",
    "NTotPrior",
    "ObservedEpisode",
    "PosteriorDraws",
    "SamplerConfig",
    "SensitivityModel",
    "SensitivityScenario",
    "StartWindow",
    "TestSchedule",
    "TruthDistribution",
    "WeakHazardPrior",
    "survey_schedules",
    "detection_log_term",
    "detection_weights",
    "diagnostics",
    "fit_posterior",
    "geometric_with_bump",
    "k_schedule",
    "log_posterior",
    "log_posterior_gradient",
    "one_minus_piu",
    "one_minus_piu_prime",
    "one_minus_pu",
    "p_ik",
    "p_ik_prime",
    "sample",
    "simulate",
    "summarize_survival",
    "survival",
    "survival_curve",
    "tau",
    "tau2",
]
