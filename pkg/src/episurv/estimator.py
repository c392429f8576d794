"""Model configuration and a scikit-learn style estimator around the sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ConfigurationError, DomainError, EpisodeDataset, StartWindow
from .likelihood import LogPosterior, NTotPrior, SensitivityModel
from .priors import WeakHazardPrior, default_beta_process_prior, load_prior_file
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, sample, summarize_survival

PRIOR_KINDS = ("weak", "beta_process")


@dataclass(frozen=True)
class ModelConfig:
    """Everything that defines the posterior apart from the data.

    Parameters
    ----------
    p_sens : float
        Assumed test sensitivity in ``(0, 1]``.
    mu, r : float
        Negative binomial prior on the total number of episodes. ``mu=None``
        means ``n_d / detect_fraction``.
    detect_fraction : float, optional
        Expected fraction of episodes that are detected; only used to derive
        ``mu``.
    b_min, b_max : int, optional
        Start-day window; defaults to ``1 .. period_end``.
    prior : {"weak", "beta_process"}
    alpha0, beta0 : float
        Beta parameters of the hazard prior.
    prior_file : str, optional
        Latent-curve prior for ``prior="beta_process"``; a built-in default
        is used when omitted.
    d_max : int, optional
        Defaults to the longest episode span.
    """

    p_sens: float = 0.8
    mu: Optional[float] = None
    r: float = 1.0
    detect_fraction: Optional[float] = None
    b_min: Optional[int] = None
    b_max: Optional[int] = None
    prior: str = "weak"
    alpha0: float = 0.1
    beta0: float = 1.9
    prior_file: Optional[str] = None
    d_max: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.p_sens <= 1.0:
            raise ConfigurationError("p_sens must lie in (0, 1]")
        if self.mu is not None and self.mu <= 0:
            raise ConfigurationError("mu must be positive")
        if self.r <= 0:
            raise ConfigurationError("r must be positive")
        if self.detect_fraction is not None and not 0.0 < self.detect_fraction <= 1.0:
            raise ConfigurationError("detect_fraction must lie in (0, 1]")
        if self.prior not in PRIOR_KINDS:
            raise ConfigurationError(f"prior must be one of {PRIOR_KINDS}")
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ConfigurationError("alpha0 and beta0 must be positive")
        if (self.b_min is None) != (self.b_max is None):
            raise ConfigurationError("give both b_min and b_max or neither")

    def window(self, period_end: int) -> StartWindow:
        if self.b_min is None:
            return StartWindow.for_period(period_end)
        return StartWindow(int(self.b_min), int(self.b_max))

    def n_tot_prior(self, n_d: int) -> NTotPrior:
        if self.mu is not None:
            return NTotPrior(float(self.mu), float(self.r))
        if self.detect_fraction is None:
            raise ConfigurationError("set mu or detect_fraction for the n_tot prior")
        return NTotPrior(max(n_d, 1) / self.detect_fraction, float(self.r))

    def hazard_prior(self):
        if self.prior == "weak":
            return WeakHazardPrior(self.alpha0, self.beta0)
        if self.prior_file is not None:
            return load_prior_file(self.prior_file, self.alpha0, self.beta0)
        return default_beta_process_prior(alpha0=self.alpha0, beta0=self.beta0)

    def posterior(self, data: EpisodeDataset) -> LogPosterior:
        return LogPosterior(
            data,
            self.hazard_prior(),
            self.n_tot_prior(data.n_d),
            SensitivityModel(self.p_sens),
            window=self.window(data.period_end),
            d_max=self.d_max,
        )


def fit_posterior(
    data: EpisodeDataset, model: ModelConfig, sampler: SamplerConfig = SamplerConfig()
) -> PosteriorDraws:
    """Build the posterior for ``data`` and sample it."""
    check_dataset(data)
    return sample(model.posterior(data), sampler)


def check_dataset(data) -> EpisodeDataset:
    """Type and consistency check used before fitting."""
    if not isinstance(data, EpisodeDataset):
        raise TypeError(f"expected an EpisodeDataset, got {type(data).__name__}")
    data.validate()
    return data


class DurationEstimator(BaseEstimator):
    """Posterior survival curve of episode durations.

    Parameters mirror :class:`ModelConfig` and :class:`SamplerConfig`;
    ``get_params``/``set_params`` work as for any scikit-learn estimator.

    Attributes
    ----------
    draws_ : PosteriorDraws
    diagnostics_ : dict
        Split R-hat and bulk ESS per parameter.
    d_max_ : int
    summary_ : SurvivalSummary
    """

    def __init__(
        self,
        p_sens: float = 0.8,
        mu: Optional[float] = None,
        r: float = 1.0,
        detect_fraction: Optional[float] = None,
        b_min: Optional[int] = None,
        b_max: Optional[int] = None,
        prior: str = "weak",
        alpha0: float = 0.1,
        beta0: float = 1.9,
        prior_file: Optional[str] = None,
        d_max: Optional[int] = None,
        algorithm: str = "nuts",
        chains: int = 4,
        warmup: int = 1000,
        draws: int = 1000,
        seed: int = 1,
        metric: str = "diag",
    ):
        self.p_sens = p_sens
        self.mu = mu
        self.r = r
        self.detect_fraction = detect_fraction
        self.b_min = b_min
        self.b_max = b_max
        self.prior = prior
        self.alpha0 = alpha0
        self.beta0 = beta0
        self.prior_file = prior_file
        self.d_max = d_max
        self.algorithm = algorithm
        self.chains = chains
        self.warmup = warmup
        self.draws = draws
        self.seed = seed
        self.metric = metric

    def model_config(self) -> ModelConfig:
        names = ModelConfig.__dataclass_fields__
        return ModelConfig(**{k: getattr(self, k) for k in names})

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            algorithm=self.algorithm,
            chains=self.chains,
            warmup=self.warmup,
            draws=self.draws,
            seed=self.seed,
            metric=self.metric,
        )

    def fit(self, X: EpisodeDataset, y=None) -> "DurationEstimator":
        check_dataset(X)
        post = self.model_config().posterior(X)
        self.draws_ = sample(post, self.sampler_config())
        self.diagnostics_ = diagnostics(self.draws_)
        self.d_max_ = post.d_max
        self.summary_ = summarize_survival(self.draws_)
        return self

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            if np.any(t != np.round(t)):
                raise DomainError("durations must be integers")
            t = t.astype(np.int64)
        if np.any(t < 1):
            raise DomainError("S(t) is defined for t >= 1")
        return t

    def predict(self, t) -> np.ndarray:
        """Posterior median of ``S(t)``; zero beyond ``d_max``."""
        check_is_fitted(self, "summary_")
        t = self._check_t(t)
        med = np.concatenate((self.summary_.median, [0.0]))
        return med[np.minimum(t, self.d_max_ + 1) - 1]

    def predict_interval(self, t) -> tuple:
        """Central 95% band of ``S(t)`` as ``(lo, hi)``."""
        check_is_fitted(self, "summary_")
        t = np.minimum(self._check_t(t), self.d_max_ + 1) - 1
        lo = np.concatenate((self.summary_.lo95, [0.0]))
        hi = np.concatenate((self.summary_.hi95, [0.0]))
        return lo[t], hi[t]

    def max_rhat(self) -> float:
        check_is_fitted(self, "diagnostics_")
        r = [v["rhat"] for v in self.diagnostics_.values()]
        return float(np.nanmax(r)) if np.any(np.isfinite(r)) else float("nan")


__all__ = [
    "ModelConfig",
    "DurationEstimator",
    "fit_posterior",
    "check_dataset",
]
