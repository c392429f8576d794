"""Probability kernels and the marginalised log posterior.

Every probability here is a linear combination of survival values ``S(t)``.
The scalar functions evaluate single episodes or schedules; ``LogPosterior``
precomputes index arrays once and evaluates the whole dataset, with its
gradient, in logit coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit

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
    gaps_to_tests,
    survival_curve,
)


class EvaluationError(RuntimeError):
    """A log-posterior component evaluated to NaN."""


@dataclass(frozen=True)
class SensitivityModel:
    """Constant clinical test sensitivity, known in advance."""

    p_sens: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_sens <= 1.0:
            raise DomainError(f"p_sens must lie in (0, 1], got {self.p_sens}")


PERFECT = SensitivityModel(1.0)


@dataclass(frozen=True)
class NTotPrior:
    """Negative binomial prior on the total episode count (mean ``mu``, overdispersion ``r``)."""

    mu: float
    r: float

    def __post_init__(self):
        if not (self.mu > 0 and self.r > 0):
            raise DomainError(f"NTotPrior needs mu > 0 and r > 0, got {self.mu}, {self.r}")


@dataclass(frozen=True)
class LogPosteriorParts:
    log_prior: float
    sum_log_p_ik: float
    detection_term: float

    @property
    def total(self) -> float:
        return self.log_prior + self.sum_log_p_ik + self.detection_term


def _episode_starts(episode: ObservedEpisode, window: StartWindow) -> np.ndarray:
    lo = max(episode.l_b, window.b_min)
    hi = min(episode.r_b, window.b_max)
    return np.arange(lo, hi + 1)


def _check_span(episode: ObservedEpisode, d_max: int) -> None:
    if episode.span > d_max:
        raise DomainError(
            f"episode {episode.interval} spans {episode.span} days, more than d_max = {d_max}"
        )


def p_ik(
    episode: ObservedEpisode,
    h: HazardVector,
    window: StartWindow,
    check_span: bool = True,
) -> float:
    """Probability that an episode in this individual produces exactly these bounds.

    Start days outside ``window`` carry no mass. With ``check_span=False`` the
    bounds may exceed ``d_max``, which the outcome enumeration needs.
    """
    return p_ik_prime(episode, h, PERFECT, window, check_span=check_span)


def p_ik_prime(
    episode: ObservedEpisode,
    h: HazardVector,
    sens: SensitivityModel,
    window: StartWindow,
    check_span: bool = True,
) -> float:
    """``p_ik`` allowing the bounding negative after the episode to be false.

    The per-episode factor from true positives and false negatives inside the
    episode does not depend on the hazards and is omitted.
    """
    if check_span:
        _check_span(episode, h.d_max)
    b = _episode_starts(episode, window)
    if b.size == 0:
        return 0.0
    a = episode.l_e - b + 1
    c = episode.r_e - b + 2
    s = survival_curve(h, int(c.max()))
    return float(np.sum(s[a] - sens.p_sens * s[c]) / window.size)


def one_minus_piu(
    schedule: TestSchedule, h: HazardVector, window: StartWindow, period_end: int = 58
) -> float:
    """Probability that an episode in this individual is detected (perfect tests)."""
    return one_minus_piu_prime(schedule, h, PERFECT, window, period_end)


def one_minus_piu_prime(
    schedule: TestSchedule,
    h: HazardVector,
    sens: SensitivityModel,
    window: StartWindow,
    period_end: int = 58,
) -> float:
    first, second = gaps_to_tests(schedule, window, period_end)
    if first.size == 0:
        return 0.0
    d_max = h.d_max
    s = survival_curve(h, d_max + 1)
    s_first = s[np.minimum(first, d_max + 1)]
    s_second = np.where(second > 0, s[np.clip(second, 0, d_max + 1)], 0.0)
    p = sens.p_sens
    return float(np.sum(p * s_first + (1.0 - p) * s_second) / window.size)


def one_minus_pu(
    source: Union[DetectionWeights, Sequence[TestSchedule]],
    h: HazardVector,
    sens: SensitivityModel,
    window: StartWindow,
    period_end: Optional[int] = None,
) -> float:
    """Cohort-averaged detection probability.

    ``source`` is either precomputed ``DetectionWeights`` (dot-product path) or
    the schedules themselves (per-individual summation). An empty cohort has
    detection probability 0.
    """
    if isinstance(source, DetectionWeights):
        w = source
        if w.window != window or w.d_max != h.d_max:
            raise ConfigurationError(
                f"weights built for window {w.window} and d_max {w.d_max}, "
                f"evaluated with {window} and d_max {h.d_max}"
            )
        if period_end is not None and period_end != w.period_end:
            raise ConfigurationError("weights built for a different period_end")
        if w.n_schedules == 0:
            return 0.0
        s = survival_curve(h, h.d_max)[1:]
        p = sens.p_sens
        total = p * np.dot(w.m, s) + (1.0 - p) * np.dot(w.m2, s)
        return float(total / (w.n_schedules * window.size))
    schedules = list(source)
    if not schedules:
        return 0.0
    pe = 58 if period_end is None else period_end
    acc = sum(one_minus_piu_prime(s, h, sens, window, pe) for s in schedules)
    return float(acc / len(schedules))


def detection_log_term(one_minus_pu: float, prior: NTotPrior, n_d: int) -> float:
    """Log of the count-marginalised detection factor, up to a constant."""
    if not 0.0 <= one_minus_pu <= 1.0:
        raise DomainError(f"detection probability must lie in [0, 1], got {one_minus_pu}")
    if n_d < 0:
        raise DomainError("n_d must be nonnegative")
    return -(prior.r + n_d) * np.log(prior.r + prior.mu * one_minus_pu)


def _softplus(x):
    return np.logaddexp(0.0, x)


class LogPosterior:
    """Log posterior of the hazards, compiled for repeated evaluation.

    Parameters
    ----------
    data : EpisodeDataset
    hazard_prior : WeakHazardPrior or BetaProcessPrior
    n_tot_prior : NTotPrior
    sens : SensitivityModel
    window : StartWindow, optional
        Defaults to days ``1 .. period_end``.
    d_max : int, optional
        Defaults to the longest episode span in ``data``.
    weights : DetectionWeights, optional
        Reused when given; must match ``window`` and ``d_max``.

    Notes
    -----
    The unconstrained vector is ``[logit(lambda_1..lambda_{d_max-1}), logit(h)]``
    where the second block exists only for priors with a latent hazard curve.
    ``__call__`` and ``value_and_grad`` include the log Jacobian of the logit
    transform of the hazards.
    """

    def __init__(
        self,
        data: EpisodeDataset,
        hazard_prior,
        n_tot_prior: NTotPrior,
        sens: SensitivityModel = PERFECT,
        window: Optional[StartWindow] = None,
        d_max: Optional[int] = None,
        weights: Optional[DetectionWeights] = None,
    ):
        self.data = data
        self.hazard_prior = hazard_prior
        self.n_tot_prior = n_tot_prior
        self.sens = sens
        self.window = window or StartWindow.for_period(data.period_end)
        self.d_max = int(d_max) if d_max is not None else data.max_span()
        if self.d_max < 2:
            raise DomainError("d_max must be at least 2")
        for ep in data.episodes:
            _check_span(ep, self.d_max)
        if weights is None:
            weights = detection_weights(data.schedules, self.window, self.d_max, data.period_end)
        elif weights.window != self.window or weights.d_max != self.d_max:
            raise ConfigurationError("detection weights do not match window / d_max")
        self.weights = weights
        self.n_hazards = self.d_max - 1
        self.n_latent = int(getattr(hazard_prior, "n_latent", 0))
        self.dim = self.n_hazards + self.n_latent
        self._compile_episodes()

    def _compile_episodes(self):
        # episodes with the same (a, c) index lists contribute identical terms,
        # so each distinct list is evaluated once and weighted by its count
        groups: dict = {}
        for ep in self.data.episodes:
            b = _episode_starts(ep, self.window)
            if b.size == 0:
                raise ConfigurationError(
                    f"episode {ep.interval} has no admissible start day in {self.window}"
                )
            key = (ep.l_e - int(b[-1]), ep.r_e - int(b[-1]), b.size)
            groups[key] = groups.get(key, 0) + 1
        ep_idx, a_idx, c_idx, counts = [], [], [], []
        for k, ((a_last, c_last, n), count) in enumerate(groups.items()):
            offsets = np.arange(n - 1, -1, -1)
            ep_idx.append(np.full(n, k))
            a_idx.append(a_last + 1 + offsets)
            c_idx.append(c_last + 2 + offsets)
            counts.append(count)
        if ep_idx:
            self._ep = np.concatenate(ep_idx)
            self._a = np.concatenate(a_idx)
            self._c = np.concatenate(c_idx)
            self._starts = np.flatnonzero(np.r_[True, self._ep[1:] != self._ep[:-1]])
        else:
            self._ep = self._a = self._c = np.zeros(0, dtype=np.int64)
            self._starts = np.zeros(0, dtype=np.int64)
        self._count = np.asarray(counts, dtype=float)

    @property
    def param_names(self) -> list:
        names = [f"lambda_{t}" for t in range(1, self.d_max)]
        names += [f"h_{t}" for t in range(1, self.n_latent + 1)]
        return names

    def split(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ConfigurationError(f"expected a vector of length {self.dim}, got {x.shape}")
        return x[: self.n_hazards], x[self.n_hazards :]

    def constrain(self, x: np.ndarray):
        """Map an unconstrained vector to ``(hazards, latent_hazards)``."""
        xl, y = self.split(x)
        return expit(xl), expit(y)

    def unconstrain(self, lam, h_latent=None) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        parts = [np.log(lam) - np.log1p(-lam)]
        if self.n_latent:
            h_latent = np.asarray(h_latent, dtype=float)
            parts.append(np.log(h_latent) - np.log1p(-h_latent))
        return np.concatenate(parts)

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Constrained values of ``x`` kept strictly inside (0, 1)."""
        lam, h = self.constrain(x)
        return np.clip(np.concatenate([lam, h]), np.finfo(float).tiny, np.nextafter(1.0, 0.0))

    def initial_point(self, rng: np.random.Generator, clamp=(0.01, 0.5)) -> np.ndarray:
        """Hazards drawn from the prior and clamped away from the boundary."""
        lam, h = self.hazard_prior.sample(rng, self.n_hazards, clamp=clamp)
        return self.unconstrain(lam, h if self.n_latent else None)

    def _log_survival(self, log1m: np.ndarray) -> np.ndarray:
        ls = np.empty(self.d_max + 2)
        ls[0] = ls[1] = 0.0
        ls[2 : self.d_max + 1] = np.cumsum(log1m)
        ls[self.d_max + 1] = -np.inf
        return ls

    def _episode_term(self, ls: np.ndarray, want_grad: bool):
        if self._ep.size == 0:
            return 0.0, (np.zeros(self.d_max + 2) if want_grad else None)
        p = self.sens.p_sens
        la = ls[self._a]
        lc = ls[self._c]
        with np.errstate(invalid="ignore", divide="ignore"):
            inner = (1.0 - p) - p * np.expm1(lc - la)
            log_term = la + np.log(inner)
        mx = np.maximum.reduceat(log_term, self._starts)
        finite = np.isfinite(mx)
        shift = np.where(finite, mx, 0.0)
        with np.errstate(invalid="ignore"):
            sums = np.add.reduceat(np.exp(log_term - shift[self._ep]), self._starts)
        with np.errstate(divide="ignore"):
            log_pk = np.where(finite, shift + np.log(sums), -np.inf)
        if np.any(np.isnan(log_pk)):
            raise EvaluationError("NaN in episode likelihood terms")
        total = float(np.dot(self._count, log_pk))
        if not want_grad or not np.isfinite(total):
            return total, None
        lp = log_pk[self._ep]
        wt = self._count[self._ep]
        v = np.bincount(self._a, wt * np.exp(la - lp), minlength=self.d_max + 2)
        v -= p * np.bincount(self._c, wt * np.exp(lc - lp), minlength=self.d_max + 2)
        return total, v

    def _detection(self, ls: np.ndarray, want_grad: bool):
        w = self.weights
        n_d = self.data.n_d
        prior = self.n_tot_prior
        if w.n_schedules == 0:
            q = 0.0
            return q, detection_log_term(q, prior, n_d), (np.zeros(self.d_max + 2) if want_grad else None)
        p = self.sens.p_sens
        scale = 1.0 / (w.n_schedules * self.window.size)
        wt = p * w.m + (1.0 - p) * w.m2
        s = np.exp(ls[1 : self.d_max + 1])
        q = float(np.dot(wt, s) * scale)
        q = min(max(q, 0.0), 1.0)
        term = detection_log_term(q, prior, n_d)
        if not want_grad:
            return q, term, None
        dterm_dq = -(prior.r + n_d) * prior.mu / (prior.r + prior.mu * q)
        v = np.zeros(self.d_max + 2)
        v[1 : self.d_max + 1] = dterm_dq * scale * wt * s
        return q, term, v

    def _hazard_grad(self, v: np.ndarray, lam: np.ndarray) -> np.ndarray:
        # d S(t) / d x_i = -lambda_i S(t) for i < t, and v already carries S(t)
        tail = np.cumsum(v[::-1])[::-1]
        return -lam * tail[2 : self.d_max + 1]

    def parts(self, lam, h_latent=None) -> LogPosteriorParts:
        """Log posterior on the hazard scale, split into its three components."""
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.n_hazards,):
            raise ConfigurationError(f"expected {self.n_hazards} hazards, got {lam.shape}")
        with np.errstate(divide="ignore"):
            ls = self._log_survival(np.log1p(-lam))
        log_prior = float(self.hazard_prior.log_prior(lam, h_latent))
        sum_log, _ = self._episode_term(ls, want_grad=False)
        _, det, _ = self._detection(ls, want_grad=False)
        for name, value in (("log_prior", log_prior), ("detection_term", det)):
            if np.isnan(value):
                raise EvaluationError(f"{name} is NaN")
        return LogPosteriorParts(log_prior, sum_log, float(det))

    def one_minus_pu(self, lam) -> float:
        ls = self._log_survival(np.log1p(-np.asarray(lam, dtype=float)))
        return self._detection(ls, want_grad=False)[0]

    def value_and_grad(self, x: np.ndarray):
        xl, y = self.split(x)
        lam = expit(xl)
        ls = self._log_survival(-_softplus(xl))
        prior_val, prior_grad = self.hazard_prior.unconstrained_logp_grad(xl, y)
        ep_val, v_ep = self._episode_term(ls, want_grad=True)
        _, det, v_det = self._detection(ls, want_grad=True)
        total = prior_val + ep_val + det
        if np.isnan(total):
            raise EvaluationError("log posterior is NaN")
        if not np.isfinite(total):
            return -np.inf, np.zeros(self.dim)
        grad = prior_grad.copy()
        grad[: self.n_hazards] += self._hazard_grad(v_ep + v_det, lam)
        return float(total), grad

    def __call__(self, x: np.ndarray) -> float:
        xl, y = self.split(x)
        ls = self._log_survival(-_softplus(xl))
        prior_val, _ = self.hazard_prior.unconstrained_logp_grad(xl, y)
        ep_val, _ = self._episode_term(ls, want_grad=False)
        _, det, _ = self._detection(ls, want_grad=False)
        total = prior_val + ep_val + det
        if np.isnan(total):
            raise EvaluationError("log posterior is NaN")
        return float(total)


def log_posterior(
    data: EpisodeDataset,
    h: HazardVector,
    sens: SensitivityModel,
    prior: NTotPrior,
    hazard_prior,
    window: Optional[StartWindow] = None,
    h_latent=None,
) -> LogPosteriorParts:
    """Log posterior of ``h`` with hazard-independent constants dropped."""
    post = LogPosterior(data, hazard_prior, prior, sens, window, d_max=h.d_max)
    return post.parts(h.hazards, h_latent)


def log_posterior_gradient(post: LogPosterior, x: np.ndarray) -> np.ndarray:
    """Gradient of the log posterior (with log Jacobian) in logit coordinates."""
    return post.value_and_grad(x)[1]
