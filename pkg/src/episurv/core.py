"""Data model and schedule arithmetic shared by every other module.

Times are integer day offsets. Day 1 is the first day of the analysis period
and ``period_end`` (``T``) its last; tests on days <= 0 precede the period.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """Inputs are individually valid but mutually inconsistent."""


@dataclass(frozen=True)
class TestSchedule:
    """Sorted test days of a single individual."""

    __test__ = False  # keep pytest from collecting this as a test class

    individual_id: Hashable
    test_days: tuple

    def __post_init__(self):
        days = tuple(int(d) for d in self.test_days)
        if not days:
            raise DomainError(f"schedule {self.individual_id!r} has no tests")
        if any(b <= a for a, b in zip(days, days[1:])):
            raise DomainError(
                f"schedule {self.individual_id!r}: test days must be strictly increasing"
            )
        object.__setattr__(self, "test_days", days)

    @property
    def days(self) -> np.ndarray:
        return np.asarray(self.test_days, dtype=np.int64)

    @property
    def anchor(self) -> int:
        """Lower bound (exclusive) on start days that can yield a detection.

        This is the last test on or before day 0 when one exists, otherwise the
        first test. For schedules that keep a single pre-period test the two
        coincide with the schedule minimum.
        """
        pre = [d for d in self.test_days if d <= 0]
        return pre[-1] if pre else self.test_days[0]

    def last_in_period(self, period_end: int) -> Optional[int]:
        """``T_i``: the last test on or before ``period_end``."""
        idx = np.searchsorted(self.days, period_end, side="right")
        return int(self.test_days[idx - 1]) if idx > 0 else None

    def check_in_cohort(self, period_end: int) -> None:
        if not any(1 <= d <= period_end for d in self.test_days):
            raise DomainError(
                f"schedule {self.individual_id!r} has no test in [1, {period_end}]"
            )


@dataclass(frozen=True)
class ObservedEpisode:
    """Bounding intervals of a detected episode.

    The episode began in ``[l_b, r_b]`` and ended in ``[l_e, r_e]``.
    ``intermediate_results`` holds ``(day, result)`` pairs for tests strictly
    between ``r_b`` and ``l_e``; they only scale the likelihood by a constant.
    """

    individual_id: Hashable
    l_b: int
    r_b: int
    l_e: int
    r_e: int
    intermediate_results: tuple = ()

    def __post_init__(self):
        for name in ("l_b", "r_b", "l_e", "r_e"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (self.l_b <= self.r_b <= self.l_e <= self.r_e):
            raise DomainError(
                f"episode of {self.individual_id!r}: need l_b <= r_b <= l_e <= r_e, "
                f"got {self.interval}"
            )
        results = tuple((int(d), int(r)) for d, r in self.intermediate_results)
        for day, res in results:
            if not self.r_b < day < self.l_e:
                raise DomainError(
                    f"episode of {self.individual_id!r}: intermediate test on day "
                    f"{day} is outside ({self.r_b}, {self.l_e})"
                )
            if res not in (0, 1):
                raise DomainError("intermediate results must be 0 or 1")
        object.__setattr__(self, "intermediate_results", results)

    @property
    def interval(self) -> tuple:
        return (self.l_b, self.r_b, self.l_e, self.r_e)

    @property
    def span(self) -> int:
        """Longest duration compatible with the bounds, ``r_e - l_b + 1``."""
        return self.r_e - self.l_b + 1

    def validate_against(self, schedule: TestSchedule, period_end: int) -> None:
        """Check the construction rules that tie an episode to its schedule."""
        days = set(schedule.test_days)
        who = f"episode of {self.individual_id!r} {self.interval}"
        if not 1 <= self.r_b <= period_end:
            raise DomainError(f"{who}: r_b must lie in [1, {period_end}]")
        if self.l_b - 1 not in days:
            raise DomainError(f"{who}: l_b - 1 = {self.l_b - 1} is not a test day")
        if self.r_b not in days:
            raise DomainError(f"{who}: r_b is not a test day")
        if self.l_e not in days:
            raise DomainError(f"{who}: l_e is not a test day")
        if self.r_e + 1 not in days:
            raise DomainError(f"{who}: r_e + 1 = {self.r_e + 1} is not a test day")
        between = [d for d in schedule.test_days if self.l_b - 1 < d < self.r_b]
        if between:
            raise DomainError(f"{who}: tests inside (l_b - 1, r_b) at {between}")
        between = [d for d in schedule.test_days if self.l_e < d < self.r_e + 1]
        if between:
            raise DomainError(f"{who}: tests inside (l_e, r_e + 1) at {between}")


@dataclass(frozen=True)
class EpisodeDataset:
    episodes: tuple
    schedules: tuple
    period_end: int = 58

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))
        object.__setattr__(self, "schedules", tuple(self.schedules))
        ids = [s.individual_id for s in self.schedules]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate individual ids among schedules")
        by_id = dict(zip(ids, self.schedules))
        for ep in self.episodes:
            if ep.individual_id not in by_id:
                raise DomainError(f"episode references unknown individual {ep.individual_id!r}")

    @property
    def n_d(self) -> int:
        return len(self.episodes)

    @property
    def n_cohort(self) -> int:
        return len(self.schedules)

    def schedule_map(self) -> dict:
        return {s.individual_id: s for s in self.schedules}

    def validate(self) -> None:
        """Full consistency check of episodes against schedules and the period."""
        by_id = self.schedule_map()
        for s in self.schedules:
            s.check_in_cohort(self.period_end)
        for ep in self.episodes:
            ep.validate_against(by_id[ep.individual_id], self.period_end)

    def max_span(self) -> int:
        """Largest ``r_e - l_b + 1`` over episodes; the data-driven ``d_max``."""
        if not self.episodes:
            raise DomainError("d_max cannot be derived from an empty episode list")
        return max(ep.span for ep in self.episodes)


@dataclass(frozen=True)
class HazardVector:
    """Discrete-time hazards ``lambda_1 .. lambda_{d_max - 1}``.

    The hazard on day ``d_max`` is implicitly 1, so survival is zero beyond
    ``d_max``.
    """

    hazards: np.ndarray

    def __post_init__(self):
        lam = np.array(self.hazards, dtype=float).reshape(-1)
        if np.any(~np.isfinite(lam)) or np.any(lam < 0) or np.any(lam > 1):
            raise DomainError("hazards must lie in [0, 1]")
        lam.setflags(write=False)
        object.__setattr__(self, "hazards", lam)

    @property
    def d_max(self) -> int:
        return self.hazards.size + 1

    @classmethod
    def constant(cls, value: float, d_max: int) -> "HazardVector":
        return cls(np.full(d_max - 1, float(value)))


@dataclass(frozen=True)
class StartWindow:
    """Inclusive range of days an episode may begin, each equally likely."""

    b_min: int
    b_max: int

    def __post_init__(self):
        if self.b_min > self.b_max:
            raise DomainError(f"empty start window [{self.b_min}, {self.b_max}]")

    @property
    def size(self) -> int:
        return self.b_max - self.b_min + 1

    @classmethod
    def for_period(cls, period_end: int) -> "StartWindow":
        return cls(1, period_end)


@dataclass(frozen=True)
class DetectionWeights:
    """Start-day tallies that turn the detection probability into dot products.

    ``m[t - 1]`` counts (individual, start day) pairs whose gap to the first
    test at or after the start, plus one, equals ``t``; ``m2`` does the same
    for the second test. Pairs whose value exceeds ``d_max`` (or whose second
    test does not exist) have zero survival and are counted in the overflow
    fields only.
    """

    m: np.ndarray
    m2: np.ndarray
    window: StartWindow
    d_max: int
    n_schedules: int
    period_end: int
    overflow: int = 0
    overflow2: int = 0

    @property
    def n_starts(self) -> int:
        return int(self.m.sum()) + self.overflow


def survival_curve(h: HazardVector, t_max: Optional[int] = None) -> np.ndarray:
    """Return ``s`` with ``s[t] = S(t)`` for ``t = 0 .. t_max``.

    ``t_max`` defaults to ``d_max + 1``; ``s[0]`` is set to 1 for convenience.
    """
    d_max = h.d_max
    if t_max is None:
        t_max = d_max + 1
    s = np.zeros(max(t_max, 0) + 1)
    prod = np.concatenate(([1.0], np.cumprod(1.0 - h.hazards)))  # S(1..d_max)
    n = min(t_max, d_max)
    s[0] = 1.0
    s[1 : n + 1] = prod[:n]
    return s


def survival(h: HazardVector, t: int) -> float:
    if t < 1:
        raise DomainError(f"survival is defined for t >= 1, got {t}")
    if t > h.d_max:
        return 0.0
    return float(np.prod(1.0 - h.hazards[: t - 1]))


def tau(schedule: TestSchedule, t: int) -> Optional[int]:
    """Days from ``t`` to the first test on or after ``t``; None if there is none."""
    days = schedule.test_days
    idx = int(np.searchsorted(days, t, side="left"))
    if idx == len(days):
        return None
    return days[idx] - t


def tau2(schedule: TestSchedule, b: int) -> Optional[int]:
    """Days from ``b`` to the second test on or after ``b``."""
    days = schedule.test_days
    idx = int(np.searchsorted(days, b, side="left"))
    if idx + 1 >= len(days):
        return None
    return days[idx + 1] - b


def start_range(schedule: TestSchedule, window: StartWindow, period_end: int) -> tuple:
    """Inclusive start-day range that can produce a detected episode.

    Returns ``(lo, hi)``; the range is empty when ``lo > hi``.
    """
    t_i = schedule.last_in_period(period_end)
    lo = max(window.b_min, schedule.anchor + 1)
    hi = window.b_max if t_i is None else min(window.b_max, t_i)
    if t_i is None:
        hi = lo - 1
    return lo, hi


def gaps_to_tests(schedule: TestSchedule, window: StartWindow, period_end: int):
    """``tau(b) + 1`` and ``tau2(b) + 1`` over the detectable start range.

    The second array uses -1 where there is no second test.
    """
    lo, hi = start_range(schedule, window, period_end)
    if lo > hi:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    days = schedule.days
    b = np.arange(lo, hi + 1)
    idx = np.searchsorted(days, b, side="left")
    # every b <= T_i has a test at or after it
    first = days[idx] - b + 1
    nxt = np.minimum(idx + 1, days.size - 1)
    second = np.where(idx + 1 < days.size, days[nxt] - b + 1, -1)
    return first, second


def detection_weights(
    schedules: Sequence[TestSchedule],
    window: StartWindow,
    d_max: int,
    period_end: int = 58,
) -> DetectionWeights:
    m = np.zeros(d_max, dtype=np.int64)
    m2 = np.zeros(d_max, dtype=np.int64)
    overflow = overflow2 = 0
    # identical schedules contribute identical tallies
    counts: dict = {}
    for s in schedules:
        counts[s.test_days] = counts.get(s.test_days, 0) + 1
    for days, n in counts.items():
        first, second = gaps_to_tests(TestSchedule(None, days), window, period_end)
        ok = first <= d_max
        m += n * np.bincount(first[ok] - 1, minlength=d_max)[:d_max]
        overflow += n * int(np.count_nonzero(~ok))
        ok2 = (second > 0) & (second <= d_max)
        m2 += n * np.bincount(second[ok2] - 1, minlength=d_max)[:d_max]
        overflow2 += n * int(np.count_nonzero(~ok2))
    m.setflags(write=False)
    m2.setflags(write=False)
    return DetectionWeights(
        m=m,
        m2=m2,
        window=window,
        d_max=d_max,
        n_schedules=len(schedules),
        period_end=period_end,
        overflow=overflow,
        overflow2=overflow2,
    )

