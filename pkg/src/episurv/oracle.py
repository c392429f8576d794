"""Brute-force reference evaluators.

Everything here enumerates latent (start, duration) pairs or event counts
directly from the generative definitions. Only the core data types are shared
with the fast code paths, so agreement between the two is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import nbinom

from .core import HazardVector, StartWindow, TestSchedule


def _survival_list(hazards, d_max):
    """S(1) .. S(d_max + 1) by repeated multiplication, with S(d_max + 1) = 0."""
    out = [1.0]
    for lam in hazards:
        out.append(out[-1] * (1.0 - lam))
    out.append(0.0)
    return out  # out[t - 1] == S(t)


def duration_pmf(h: HazardVector) -> np.ndarray:
    """``P(D = d)`` for ``d = 1 .. d_max``."""
    s = _survival_list(h.hazards, h.d_max)
    return np.array([s[d - 1] - s[d] for d in range(1, h.d_max + 1)])


@dataclass
class OutcomeEnumeration:
    """Mass of every observable outcome for one individual.

    ``masses`` maps ``(l_b, r_b, l_e, r_e)`` to probability; ``undetected`` is
    the mass of outcomes that yield no qualifying episode. ``no_later_test``
    is the part of ``undetected`` lost only because no test follows the end.
    """

    masses: dict = field(default_factory=dict)
    undetected: float = 0.0
    no_later_test: float = 0.0
    grid_size: int = 0

    @property
    def total(self) -> float:
        return sum(self.masses.values()) + self.undetected


def classify(days, b: int, e: int, period_end: int):
    """Bounds produced by an episode on days ``b .. e`` under perfect tests.

    Returns the interval tuple, or ``None`` if undetected, or ``"open"`` when
    the only failing rule is the missing test after the end.
    """
    positives = [t for t in days if b <= t <= e]
    if not positives:
        return None
    first, last = positives[0], positives[-1]
    if not 1 <= first <= period_end:
        return None
    before = [t for t in days if t < b]
    if not before:
        return None
    after = [t for t in days if t > e]
    if not after:
        return "open"
    return (before[-1] + 1, first, last, after[0] - 1)


def enumerate_outcomes(
    schedule: TestSchedule, h: HazardVector, window: StartWindow, period_end: int = 58
) -> OutcomeEnumeration:
    days = list(schedule.test_days)
    pmf = duration_pmf(h)
    out = OutcomeEnumeration()
    w = window.size
    for b in range(window.b_min, window.b_max + 1):
        for d in range(1, h.d_max + 1):
            out.grid_size += 1
            mass = pmf[d - 1] / w
            nu = classify(days, b, b + d - 1, period_end)
            if nu is None or nu == "open":
                out.undetected += mass
                if nu == "open":
                    out.no_later_test += mass
            else:
                out.masses[nu] = out.masses.get(nu, 0.0) + mass
    return out


def _next_tests(days, b):
    later = [t for t in days if t >= b]
    return later[0] if later else None, later[1] if len(later) > 1 else None


def piu_prime_direct(
    schedule: TestSchedule,
    h: HazardVector,
    p_sens: float,
    window: StartWindow,
    period_end: int = 58,
) -> float:
    """Undetected probability allowing one false negative at the first test.

    Each start day is checked against the detection conditions, then each
    duration is split into: no positive test possible; first test positive;
    first test falsely negative with the episode ending before the next test
    (missed); first test falsely negative with a later positive (detected).
    """
    days = list(schedule.test_days)
    pmf = duration_pmf(h)
    in_period = [t for t in days if t <= period_end]
    last_in_period = in_period[-1] if in_period else None
    pre = [t for t in days if t <= 0]
    anchor = pre[-1] if pre else days[0]
    detected = 0.0
    for b in range(window.b_min, window.b_max + 1):
        if last_in_period is None or not anchor < b <= last_in_period:
            continue
        t1, t2 = _next_tests(days, b)
        for d in range(1, h.d_max + 1):
            e = b + d - 1
            if e < t1:
                continue
            prob = pmf[d - 1] / window.size
            detected += p_sens * prob
            if t2 is not None and e >= t2:
                detected += (1.0 - p_sens) * prob
    return 1.0 - detected


def p_ik_prime_direct(
    interval, h: HazardVector, p_sens: float, window: StartWindow
) -> float:
    """Bound probability split on whether the episode outlasts ``r_e``.

    Ending within ``[l_e, r_e]`` leaves the closing negative true; ending later
    makes it a false negative with probability ``1 - p_sens``.
    """
    l_b, r_b, l_e, r_e = interval
    pmf = duration_pmf(h)
    total = 0.0
    for b in range(max(l_b, window.b_min), min(r_b, window.b_max) + 1):
        for d in range(1, h.d_max + 1):
            e = b + d - 1
            if l_e <= e <= r_e:
                total += pmf[d - 1]
            elif e > r_e:
                total += (1.0 - p_sens) * pmf[d - 1]
    return total / window.size


def log_eta_truncated(p_u: float, n_d: int, mu: float, r: float, n_cap: int) -> float:
    """Log of the count sum over ``n_tot = n_d .. n_cap`` with a negative binomial prior."""
    n = np.arange(n_d, n_cap + 1)
    log_nb = nbinom.logpmf(n, r, r / (r + mu))
    with np.errstate(divide="ignore"):
        log_pu = np.log(p_u)
    unseen = n - n_d
    log_terms = log_nb + gammaln(n + 1) - gammaln(unseen + 1)
    log_terms = log_terms + np.where(unseen > 0, unseen * log_pu, 0.0)
    return float(logsumexp(log_terms))


def eta_tail_fraction(p_u: float, n_d: int, mu: float, r: float, n_cap: int) -> float:
    """Ratio of the last summand to the truncated sum; a proxy for the dropped tail."""
    n = n_cap
    last = (
        nbinom.logpmf(n, r, r / (r + mu)) + gammaln(n + 1) - gammaln(n - n_d + 1)
        + (n - n_d) * np.log(p_u)
    )
    return float(np.exp(last - log_eta_truncated(p_u, n_d, mu, r, n_cap)))
