"""Hazard priors: independent Beta, and a discrete Beta process around a latent curve.

Each prior offers ``log_prior`` on the hazard scale and
``unconstrained_logp_grad`` in logit coordinates, the latter including the
log Jacobian of ``lambda = expit(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import betaln, digamma, expit

from .core import ConfigurationError, DomainError, HazardVector


def _log_parts(x):
    """``log(expit(x))`` and ``log(1 - expit(x))`` without overflow."""
    return -np.logaddexp(0.0, -x), -np.logaddexp(0.0, x)


def _beta_logpdf(lam, a, b):
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - 1.0) * np.log(lam) + (b - 1.0) * np.log1p(-lam) - betaln(a, b)
    # the density is unbounded at an endpoint whose exponent is negative
    return np.where(np.isnan(out), -np.inf, out)


def k_schedule(t) -> np.ndarray:
    """Concentration placed on the latent curve at day ``t``; zero after day 39."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise DomainError("k_schedule is defined for t >= 1")
    return np.where(t <= 39, expit(-0.4 * (t - 20.0)), 0.0)


@dataclass(frozen=True)
class WeakHazardPrior:
    """Independent ``Beta(alpha0, beta0)`` on every hazard (mean 0.05 by default)."""

    alpha0: float = 0.1
    beta0: float = 1.9
    n_latent = 0

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise DomainError("alpha0 and beta0 must be positive")

    @property
    def mean(self) -> float:
        return self.alpha0 / (self.alpha0 + self.beta0)

    def log_prior(self, lam, h_latent=None) -> float:
        lam = np.asarray(lam, dtype=float)
        if np.any((lam <= 0) | (lam >= 1)):
            return -np.inf
        return float(np.sum(_beta_logpdf(lam, self.alpha0, self.beta0)))

    def unconstrained_logp_grad(self, x, y=None):
        log_l, log_1ml = _log_parts(x)
        lam = np.exp(log_l)
        val = np.sum(self.alpha0 * log_l + self.beta0 * log_1ml) - x.size * betaln(
            self.alpha0, self.beta0
        )
        grad = self.alpha0 * (1.0 - lam) - self.beta0 * lam
        return float(val), grad

    def sample(self, rng: np.random.Generator, n_hazards: int, clamp=None):
        lam = rng.beta(self.alpha0, self.beta0, size=n_hazards)
        if clamp is not None:
            lam = np.clip(lam, *clamp)
        return lam, np.zeros(0)


def weak_log_prior(h: HazardVector, prior: WeakHazardPrior) -> float:
    return prior.log_prior(h.hazards)


@dataclass(frozen=True, eq=False)
class BetaProcessPrior:
    """Hazards Beta-distributed around a latent curve ``h`` with logit-normal law.

    ``lambda_t ~ Beta(k_t h_t + alpha0, k_t (1 - h_t) + beta0)`` for ``t`` within
    the latent block and ``Beta(alpha0, beta0)`` after it, with
    ``logit(h) ~ N(mu_A, Sigma_A)``.
    """

    mu_A: np.ndarray
    Sigma_A: np.ndarray
    alpha0: float = 0.1
    beta0: float = 1.9
    k: Optional[np.ndarray] = None
    _chol: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu_A, dtype=float).reshape(-1)
        cov = np.asarray(self.Sigma_A, dtype=float)
        if cov.shape != (mu.size, mu.size):
            raise ConfigurationError(
                f"Sigma_A has shape {cov.shape}, expected {(mu.size, mu.size)}"
            )
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise DomainError("Sigma_A is not symmetric")
        try:
            chol = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError as exc:
            raise DomainError("Sigma_A is not positive definite") from exc
        k = k_schedule(np.arange(1, mu.size + 1)) if self.k is None else np.asarray(self.k, float)
        if k.shape != mu.shape:
            raise ConfigurationError("k must have one entry per latent hazard")
        if np.any(k < 0):
            raise DomainError("k must be nonnegative")
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise DomainError("alpha0 and beta0 must be positive")
        object.__setattr__(self, "mu_A", mu)
        object.__setattr__(self, "Sigma_A", cov)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "_chol", chol)
        half_logdet = np.sum(np.log(np.diag(chol[0])))
        object.__setattr__(self, "_mvn_const", -0.5 * mu.size * np.log(2 * np.pi) - half_logdet)

    @property
    def n_latent(self) -> int:
        return self.mu_A.size

    def _mvn(self, y):
        r = y - self.mu_A
        sol = cho_solve(self._chol, r)
        return self._mvn_const - 0.5 * float(r @ sol), -sol

    def _shapes(self, n_hazards: int, h):
        m = min(n_hazards, self.n_latent)
        a = np.full(n_hazards, self.alpha0)
        b = np.full(n_hazards, self.beta0)
        a[:m] += self.k[:m] * h[:m]
        b[:m] += self.k[:m] * (1.0 - h[:m])
        return a, b, m

    def log_prior(self, lam, h_latent) -> float:
        lam = np.asarray(lam, dtype=float)
        h = np.asarray(h_latent, dtype=float)
        if h.shape != self.mu_A.shape:
            raise ConfigurationError(f"latent curve must have {self.n_latent} entries")
        if np.any((lam <= 0) | (lam >= 1)) or np.any((h <= 0) | (h >= 1)):
            return -np.inf
        mvn, _ = self._mvn(np.log(h) - np.log1p(-h))
        a, b, _ = self._shapes(lam.size, h)
        return mvn + float(np.sum(_beta_logpdf(lam, a, b)))

    def unconstrained_logp_grad(self, x, y):
        if y.shape != self.mu_A.shape:
            raise ConfigurationError(f"latent block must have {self.n_latent} entries")
        log_l, log_1ml = _log_parts(x)
        lam = np.exp(log_l)
        h = expit(y)
        a, b, m = self._shapes(x.size, h)
        mvn, grad_y = self._mvn(y)
        val = mvn + np.sum(a * log_l + b * log_1ml - betaln(a, b))
        grad_x = a * (1.0 - lam) - b * lam
        psi_ab = digamma(a[:m] + b[:m])
        d_a = log_l[:m] - digamma(a[:m]) + psi_ab
        d_b = log_1ml[:m] - digamma(b[:m]) + psi_ab
        grad_y = grad_y.copy()
        grad_y[:m] += self.k[:m] * (d_a - d_b) * h[:m] * (1.0 - h[:m])
        return float(val), np.concatenate([grad_x, grad_y])

    def sample(self, rng: np.random.Generator, n_hazards: int, clamp=None):
        y = rng.multivariate_normal(self.mu_A, self.Sigma_A, method="cholesky")
        h = expit(y)
        a, b, _ = self._shapes(n_hazards, h)
        lam = rng.beta(a, b)
        if clamp is not None:
            lam = np.clip(lam, *clamp)
        return lam, h


def beta_process_log_prior(h: HazardVector, h_latent, prior: BetaProcessPrior) -> float:
    return prior.log_prior(h.hazards, h_latent)


def default_beta_process_prior(n_latent: int = 39, alpha0: float = 0.1, beta0: float = 1.9):
    """Synthetic stand-in for an externally estimated latent hazard curve.

    Logit means rise linearly from logit(0.02) to logit(0.2); the covariance is
    AR(1) with standard deviation 0.5 and correlation 0.8 between neighbours.
    """
    t = np.arange(n_latent)
    lo, hi = np.log(0.02 / 0.98), np.log(0.2 / 0.8)
    mu = lo + (hi - lo) * t / max(n_latent - 1, 1)
    cov = 0.25 * 0.8 ** np.abs(t[:, None] - t[None, :])
    return BetaProcessPrior(mu, cov, alpha0, beta0)


def load_prior_file(path, alpha0: float = 0.1, beta0: float = 1.9) -> BetaProcessPrior:
    """Read a latent-curve prior.

    Format (whitespace separated, ``#`` starts a comment)::

        dim K
        mu_1 ... mu_K
        Sigma_11 ... Sigma_1K
        ...
        Sigma_K1 ... Sigma_KK
    """
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or rows[0][0] != "dim" or len(rows[0]) != 2:
        raise ConfigurationError(f"{path}: first line must be 'dim K'")
    k = int(rows[0][1])
    if len(rows) != k + 2:
        raise ConfigurationError(f"{path}: expected {k + 2} rows, found {len(rows)}")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if body.shape != (k + 1, k):
        raise ConfigurationError(f"{path}: every row must have {k} values")
    return BetaProcessPrior(body[0], body[1:], alpha0, beta0)


def write_prior_file(path, prior: BetaProcessPrior) -> None:
    k = prior.n_latent
    lines = [f"dim {k}", " ".join(repr(float(v)) for v in prior.mu_A)]
    lines += [" ".join(repr(float(v)) for v in row) for row in prior.Sigma_A]
    Path(path).write_text("\n".join(lines) + "\n")
