"""Rank-normalised split R-hat and effective sample size.

Inputs are arrays of shape ``(chains, draws)`` for one parameter.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, rankdata


def _split(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    half = x.shape[1] // 2
    if half < 2:
        raise ValueError("need at least 4 draws per chain")
    return np.concatenate((x[:, :half], x[:, -half:]), axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return np.nan
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    if np.all(x.var(axis=1) == 0):
        return np.nan
    acov = np.array([_autocov(c) for c in x])
    chain_mean = x.mean(axis=1)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    rho = np.empty(n)
    rho[0] = 1.0
    rho[1:] = 1.0 - (mean_var - acov[:, 1:].mean(axis=0)) / var_plus
    # Geyer's initial positive sequence on pair sums, made monotone
    t = 0
    pair_sums = []
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pair_sums.append(p)
        t += 2
    pair_sums = np.minimum.accumulate(np.array(pair_sums)) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * pair_sums.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def split_rhat(x) -> float:
    """Rank-normalised split R-hat: max over the bulk and folded (tail) versions.

    NaN for a single chain or constant draws.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < 2:
        return np.nan
    s = _split(x)
    if np.all(s == s.flat[0]):
        return np.nan
    bulk = _rhat(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat(_rank_normalize(folded))
    return float(np.nanmax([bulk, tail]))


def ess_bulk(x) -> float:
    """Bulk effective sample size of rank-normalised split chains."""
    s = _split(x)
    if np.all(s == s.flat[0]):
        return np.nan
    return _ess(_rank_normalize(s))


def ess_mean(x) -> float:
    """Effective sample size for the posterior mean (no rank normalisation)."""
    return _ess(_split(x))


def mcse_mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(ess_mean(x)))
