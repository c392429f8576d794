"""Synthetic testing cohorts with one latent episode per individual."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DomainError, EpisodeDataset, ObservedEpisode, TestSchedule


class InsufficientDetectionsError(RuntimeError):
    def __init__(self, achieved: int, requested: int):
        super().__init__(f"only {achieved} detected episodes, {requested} requested")
        self.achieved = achieved
        self.requested = requested


@dataclass(frozen=True)
class TruthDistribution:
    """Duration pmf over ``1 .. len(pmf)``; normalised on construction."""

    pmf: np.ndarray

    def __post_init__(self):
        p = np.array(self.pmf, dtype=float).reshape(-1)
        if p.size == 0 or np.any(~np.isfinite(p)) or np.any(p < 0):
            raise DomainError("pmf entries must be finite and nonnegative")
        total = p.sum()
        if total <= 0:
            raise DomainError("pmf has zero total mass")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "pmf", p)

    @property
    def max_duration(self) -> int:
        return self.pmf.size

    def survival(self, t_max: Optional[int] = None) -> np.ndarray:
        """``S(t) = P(D >= t)`` for ``t = 1 .. t_max``."""
        t_max = self.max_duration + 1 if t_max is None else t_max
        tail = np.concatenate((np.cumsum(self.pmf[::-1])[::-1], [0.0]))
        s = np.zeros(t_max)
        n = min(t_max, tail.size)
        s[:n] = tail[:n]
        return np.minimum(s, 1.0)

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.max_duration + 1), self.pmf))


def geometric_with_bump(
    p: float = 0.08,
    bump_center: float = 35.0,
    bump_width: float = 6.0,
    bump_weight: float = 0.1,
    max_duration: int = 100,
) -> TruthDistribution:
    """Geometric durations plus a Gaussian-shaped bump of long episodes."""
    d = np.arange(1, max_duration + 1)
    geom = p * (1.0 - p) ** (d - 1)
    bump = np.exp(-0.5 * ((d - bump_center) / bump_width) ** 2)
    pmf = (1.0 - bump_weight) * geom / geom.sum() + bump_weight * bump / bump.sum()
    return TruthDistribution(pmf)


def splice_truth(
    f_head: TruthDistribution, f_tail: TruthDistribution, cutover: int = 30
) -> TruthDistribution:
    """Head pmf up to ``cutover`` days, tail pmf afterwards, renormalised."""
    if cutover < 1:
        raise DomainError("cutover must be at least 1")
    n = max(f_head.max_duration, f_tail.max_duration)
    head = np.zeros(n)
    tail = np.zeros(n)
    head[: f_head.max_duration] = f_head.pmf
    tail[: f_tail.max_duration] = f_tail.pmf
    spliced = np.where(np.arange(1, n + 1) <= cutover, head, tail)
    if spliced.sum() <= 0:
        raise DomainError("spliced pmf has zero mass")
    return TruthDistribution(spliced)


def v_of_t(t):
    """Test sensitivity ``t`` days after the episode began (day of onset is 0)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("v_of_t is defined for t >= 0")
    out = np.where(t <= 50, 0.9 - (0.4 / 50.0) * t, 0.5)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SensitivityScenario:
    """Either a constant sensitivity ``p`` or the declining profile ``v_of_t``."""

    kind: str = "constant"
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "varying"):
            raise DomainError(f"unknown sensitivity scenario {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.p <= 1.0:
            raise DomainError("constant sensitivity must lie in [0, 1]")

    @classmethod
    def constant(cls, p: float) -> "SensitivityScenario":
        return cls("constant", float(p))

    @classmethod
    def varying(cls) -> "SensitivityScenario":
        return cls("varying", float("nan"))

    def __call__(self, days_since_start):
        if self.kind == "varying":
            return v_of_t(days_since_start)
        return np.full(np.shape(days_since_start), self.p)


@dataclass(frozen=True)
class LatentEpisode:
    individual_id: object
    b: int
    e: int
    detected: bool = False
    selected: bool = False

    @property
    def d(self) -> int:
        return self.e - self.b + 1


@dataclass(frozen=True)
class SimOutput:
    dataset: EpisodeDataset
    retained_fraction: float
    latent: tuple
    n_retained: int
    start_range: tuple


def survey_schedules(
    n: int,
    rng: np.random.Generator,
    period_end: int = 58,
    enrol_range: tuple = (-300, 58),
    follow_up: int = 200,
    jitter: int = 0,
    id_prefix: str = "p",
) -> list:
    """Five weekly visits from enrolment, then four-weekly visits.

    Only the last test on or before day 0 is kept, and everybody has a test in
    ``[1, period_end]``. Visits continue until ``period_end + follow_up``.
    ``jitter`` shifts each visit after the first by up to that many days.
    """
    out = []
    while len(out) < n:
        start = int(rng.integers(enrol_range[0], enrol_range[1] + 1))
        n_visits = 5 + (period_end + follow_up - start) // 28 + 1
        offsets = np.concatenate((7 * np.arange(5), 28 + 28 * np.arange(1, n_visits - 4)))
        days = start + offsets
        if jitter:
            days[1:] += rng.integers(-jitter, jitter + 1, size=days.size - 1)
            days = np.unique(days)
        days = days[days <= period_end + follow_up]
        pre = days[days <= 0]
        keep = days[days > 0]
        if pre.size:
            keep = np.concatenate(([pre[-1]], keep))
        if not np.any((keep >= 1) & (keep <= period_end)):
            continue
        out.append(TestSchedule(f"{id_prefix}{len(out)}", tuple(int(d) for d in keep)))
    return out


def _observe(days: np.ndarray, b: int, e: int, scenario, rng):
    """Positive-result mask over ``days`` for an episode on days ``b .. e``."""
    inside = (days >= b) & (days <= e)
    sens = scenario(days[inside] - b)
    positive = np.zeros(days.size, dtype=bool)
    positive[inside] = rng.random(inside.sum()) < sens
    return positive


def simulate(
    schedules: Sequence[TestSchedule],
    truth: TruthDistribution,
    scenario: SensitivityScenario,
    n_d_target: int,
    seed,
    period_end: int = 58,
    pre_period: int = 100,
) -> SimOutput:
    """Give each individual one episode, test it, and keep detected ones.

    Start days are uniform on ``[1 - pre_period, period_end]``. Detected
    episodes must have their first positive in ``[1, period_end]`` and a
    negative test on each side; ``n_d_target`` of them are then drawn without
    replacement.
    """
    rng = np.random.default_rng(seed)
    b_lo, b_hi = 1 - pre_period, period_end
    n = len(schedules)
    starts = rng.integers(b_lo, b_hi + 1, size=n)
    durations = rng.choice(np.arange(1, truth.max_duration + 1), size=n, p=truth.pmf)
    ends = starts + durations - 1

    retained = []
    latent = []
    for i, s in enumerate(schedules):
        days = s.days
        b, e = int(starts[i]), int(ends[i])
        positive = _observe(days, b, e, scenario, rng)
        ep = None
        pos_idx = np.flatnonzero(positive)
        if pos_idx.size:
            first, last = pos_idx[0], pos_idx[-1]
            if 1 <= days[first] <= period_end and first > 0 and last + 1 < days.size:
                between = range(first + 1, last)
                ep = ObservedEpisode(
                    s.individual_id,
                    int(days[first - 1]) + 1,
                    int(days[first]),
                    int(days[last]),
                    int(days[last + 1]) - 1,
                    tuple((int(days[j]), int(positive[j])) for j in between),
                )
        latent.append([s.individual_id, b, e, ep is not None])
        if ep is not None:
            retained.append((i, ep))

    if len(retained) < n_d_target:
        raise InsufficientDetectionsError(len(retained), n_d_target)
    pick = np.sort(rng.choice(len(retained), size=n_d_target, replace=False))
    chosen = {retained[j][0] for j in pick}
    episodes = [retained[j][1] for j in pick]
    latent_eps = tuple(
        LatentEpisode(iid, b, e, det, i in chosen) for i, (iid, b, e, det) in enumerate(latent)
    )
    data = EpisodeDataset(episodes, schedules, period_end)
    return SimOutput(
        dataset=data,
        retained_fraction=len(retained) / n if n else 0.0,
        latent=latent_eps,
        n_retained=len(retained),
        start_range=(b_lo, b_hi),
    )
