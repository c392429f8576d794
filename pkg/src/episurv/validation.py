"""Agreement checks between the closed-form kernels and the brute-force oracles.

Each check draws random small cases, evaluates both sides and reports the
largest absolute deviation. The ``validate`` command runs all of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .core import (
    HazardVector,
    ObservedEpisode,
    StartWindow,
    TestSchedule,
    detection_weights,
)
from .likelihood import (
    NTotPrior,
    SensitivityModel,
    detection_log_term,
    one_minus_piu,
    one_minus_piu_prime,
    one_minus_pu,
    p_ik,
    p_ik_prime,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    n_cases: int
    max_abs_dev: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_abs_dev) and self.max_abs_dev <= self.tolerance)


def random_case(rng: np.random.Generator, max_w: int = 60, max_d: int = 60):
    """A schedule, hazards and window small enough for the oracle.

    The schedule always has a test at least ``d_max`` days after the period so
    that every episode starting in the window is followed by a test.
    """
    period_end = int(rng.integers(5, 40))
    d_max = int(rng.integers(2, max_d + 1))
    b_min = int(rng.integers(max(-20, period_end - max_w + 1), 2))
    b_max = int(rng.integers(max(b_min, 1), period_end + 1))
    n_tests = int(rng.integers(2, 12))
    days = set(rng.integers(-25, period_end + 15, size=n_tests).tolist())
    days.add(int(rng.integers(1, period_end + 1)))
    days.add(period_end + d_max + int(rng.integers(0, 10)))
    schedule = TestSchedule("case", tuple(sorted(days)))
    hazards = rng.uniform(0.01, 0.6, size=d_max - 1)
    return schedule, HazardVector(hazards), StartWindow(b_min, b_max), period_end


def check_partition(n_cases: int, rng, tol: float = 1e-12) -> list:
    """Perfect-test enumeration against ``p_ik`` and ``one_minus_piu``."""
    dev_total = dev_nu = dev_u = 0.0
    for _ in range(n_cases):
        sched, h, window, T = random_case(rng)
        enum = oracle.enumerate_outcomes(sched, h, window, T)
        dev_total = max(dev_total, abs(enum.total - 1.0))
        for nu, mass in enum.masses.items():
            ep = ObservedEpisode(sched.individual_id, *nu)
            dev_nu = max(dev_nu, abs(mass - p_ik(ep, h, window, check_span=False)))
        dev_u = max(dev_u, abs(enum.undetected - (1.0 - one_minus_piu(sched, h, window, T))))
    return [
        CheckResult("partition_total", n_cases, dev_total, tol),
        CheckResult("p_ik_vs_enumeration", n_cases, dev_nu, tol),
        CheckResult("undetected_vs_one_minus_piu", n_cases, dev_u, tol),
    ]


def check_false_negatives(n_cases: int, rng, tol: float = 1e-12) -> list:
    """Primed kernels against their case-split oracles."""
    dev_k = dev_u = 0.0
    for i in range(n_cases):
        p = (0.6, 0.8, 0.95)[i % 3]
        sched, h, window, T = random_case(rng)
        sens = SensitivityModel(p)
        direct_u = oracle.piu_prime_direct(sched, h, p, window, T)
        dev_u = max(dev_u, abs((1.0 - direct_u) - one_minus_piu_prime(sched, h, sens, window, T)))
        enum = oracle.enumerate_outcomes(sched, h, window, T)
        for nu in enum.masses:
            ep = ObservedEpisode(sched.individual_id, *nu)
            fast = p_ik_prime(ep, h, sens, window, check_span=False)
            dev_k = max(dev_k, abs(fast - oracle.p_ik_prime_direct(nu, h, p, window)))
    return [
        CheckResult("p_ik_prime_vs_direct", n_cases, dev_k, tol),
        CheckResult("one_minus_piu_prime_vs_direct", n_cases, dev_u, tol),
    ]


def check_eta(n_pairs: int, rng, tol: float = 1e-8, n_d: int = 5, mu: float = 20.0, r: float = 3.0):
    """Differences of the detection term against the truncated count sum."""
    prior = NTotPrior(mu, r)
    dev = 0.0
    for _ in range(n_pairs):
        q1, q2 = rng.uniform(0.05, 0.95, size=2)
        cap = _eta_cap(1.0 - min(q1, q2), n_d, mu, r)
        closed = detection_log_term(q1, prior, n_d) - detection_log_term(q2, prior, n_d)
        summed = oracle.log_eta_truncated(1.0 - q1, n_d, mu, r, cap) - oracle.log_eta_truncated(
            1.0 - q2, n_d, mu, r, cap
        )
        dev = max(dev, abs(closed - summed))
    return [CheckResult("detection_term_vs_count_sum", n_pairs, dev, tol)]


def _eta_cap(p_u: float, n_d: int, mu: float, r: float, rel: float = 1e-13) -> int:
    cap = n_d + 50
    while oracle.eta_tail_fraction(p_u, n_d, mu, r, cap) > rel:
        cap *= 2
    return 2 * cap


def check_weights(n_cohorts: int, rng, tol: float = 1e-12) -> list:
    """Dot-product detection probability against per-schedule summation."""
    dev = 0.0
    for _ in range(n_cohorts):
        sched, h, window, T = random_case(rng)
        cohort = [sched]
        for j in range(int(rng.integers(1, 8))):
            s, _, _, _ = random_case(rng)
            cohort.append(TestSchedule(f"c{j}", s.test_days))
        sens = SensitivityModel(float(rng.choice([0.6, 0.8, 1.0])))
        w = detection_weights(cohort, window, h.d_max, T)
        fast = one_minus_pu(w, h, sens, window, T)
        slow = one_minus_pu(cohort, h, sens, window, T)
        dev = max(dev, abs(fast - slow))
    return [CheckResult("dot_product_vs_per_schedule", n_cohorts, dev, tol)]


def run_all(n_cases: int = 100, seed: int = 1) -> list:
    rng = np.random.default_rng(seed)
    return (
        check_partition(n_cases, rng)
        + check_false_negatives(n_cases, rng)
        + check_eta(10, rng)
        + check_weights(max(n_cases // 2, 1), rng)
    )
