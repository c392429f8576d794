"""CSV readers and writers for schedules, episodes, truth pmfs and draws.

Every file has a header row. Floats are written with ``repr`` so they round
trip exactly and do not depend on the locale.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DomainError, EpisodeDataset, ObservedEpisode, TestSchedule

SCHEDULE_HEADER = ["individual_id", "test_day"]
EPISODE_HEADER = ["individual_id", "l_b", "r_b", "l_e", "r_e"]


class ParseError(ValueError):
    """A malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def fmt(value) -> str:
    """Full-precision text for ints and floats."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _rows(path, header: Sequence[str], optional: Sequence[str] = ()):
    """Yield ``(line_number, record)`` after checking the header."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ParseError(path, 1, "file is empty") from None
        allowed = list(header) + list(optional)
        if head[: len(header)] != list(header) or any(c not in allowed for c in head):
            raise ParseError(path, 1, f"header must be {','.join(header)}, got {','.join(head)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(head):
                raise ParseError(path, line, f"expected {len(head)} fields, got {len(row)}")
            yield line, dict(zip(head, (c.strip() for c in row)))


def _int(path, line, rec, key) -> int:
    try:
        return int(rec[key])
    except ValueError:
        raise ParseError(path, line, f"{key} is not an integer: {rec[key]!r}") from None


def load_schedules(path) -> list:
    """Group ``individual_id,test_day`` rows into sorted schedules.

    Individuals keep the order of their first appearance.
    """
    days = defaultdict(list)
    for line, rec in _rows(path, SCHEDULE_HEADER):
        iid = rec["individual_id"]
        if not iid:
            raise ParseError(path, line, "empty individual_id")
        day = _int(path, line, rec, "test_day")
        if day in days[iid]:
            raise ParseError(path, line, f"duplicate test day {day} for {iid!r}")
        days[iid].append(day)
    if not days:
        raise ParseError(path, 2, "no schedule rows")
    return [TestSchedule(iid, tuple(sorted(d))) for iid, d in days.items()]


def _parse_intermediate(path, line, text: str) -> tuple:
    if not text:
        return ()
    out = []
    for item in text.split(";"):
        try:
            day, res = item.split(":")
            out.append((int(day), int(res)))
        except ValueError:
            raise ParseError(path, line, f"bad intermediate result {item!r}") from None
    return tuple(out)


def load_episodes(path, schedules: Sequence[TestSchedule], period_end: int = 58) -> EpisodeDataset:
    """Read episode bounds and validate them against ``schedules``.

    An optional ``intermediate`` column holds ``day:result`` pairs joined by
    ``;``. Violations are reported with the line number and the broken rule.
    """
    episodes = []
    by_id = {s.individual_id: s for s in schedules}
    seen = set()
    for line, rec in _rows(path, EPISODE_HEADER, optional=("intermediate",)):
        iid = rec["individual_id"]
        if iid not in by_id:
            raise ParseError(path, line, f"unknown individual {iid!r}")
        if iid in seen:
            raise ParseError(path, line, f"second episode for {iid!r}")
        seen.add(iid)
        bounds = [_int(path, line, rec, k) for k in EPISODE_HEADER[1:]]
        try:
            ep = ObservedEpisode(
                iid, *bounds, _parse_intermediate(path, line, rec.get("intermediate", ""))
            )
            ep.validate_against(by_id[iid], period_end)
        except DomainError as exc:
            raise ParseError(path, line, str(exc)) from None
        episodes.append(ep)
    data = EpisodeDataset(episodes, schedules, period_end)
    for s in data.schedules:
        s.check_in_cohort(period_end)
    return data


def write_rows(path, header: Sequence[str], rows: Iterable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_schedules(path, schedules: Sequence[TestSchedule]) -> None:
    write_rows(path, SCHEDULE_HEADER, ((s.individual_id, d) for s in schedules for d in s.test_days))


def write_episodes(path, episodes: Sequence[ObservedEpisode]) -> None:
    def rows():
        for ep in episodes:
            inter = ";".join(f"{d}:{r}" for d, r in ep.intermediate_results)
            yield (ep.individual_id, *ep.interval, inter)

    write_rows(path, EPISODE_HEADER + ["intermediate"], rows())


def write_dataset(directory, data: EpisodeDataset) -> tuple:
    """Write ``schedules.csv`` and ``episodes.csv``; returns both paths."""
    directory = Path(directory)
    sched, eps = directory / "schedules.csv", directory / "episodes.csv"
    write_schedules(sched, data.schedules)
    write_episodes(eps, data.episodes)
    return sched, eps


def load_truth(path) -> np.ndarray:
    """Duration pmf from a ``duration,probability`` CSV; durations must be 1, 2, ...

    Missing durations are filled with zero probability.
    """
    pairs = []
    for line, rec in _rows(path, ["duration", "probability"]):
        d = _int(path, line, rec, "duration")
        try:
            p = float(rec["probability"])
        except ValueError:
            raise ParseError(path, line, f"probability is not a number: {rec['probability']!r}") from None
        if d < 1:
            raise ParseError(path, line, "durations start at 1")
        if not np.isfinite(p) or p < 0:
            raise ParseError(path, line, "probability must be finite and nonnegative")
        if any(d == prev for prev, _ in pairs):
            raise ParseError(path, line, f"duplicate duration {d}")
        pairs.append((d, p))
    if not pairs:
        raise ParseError(path, 2, "no pmf rows")
    pmf = np.zeros(max(d for d, _ in pairs))
    for d, p in pairs:
        pmf[d - 1] = p
    return pmf


def write_truth(path, pmf) -> None:
    write_rows(path, ["duration", "probability"], ((d, float(p)) for d, p in enumerate(pmf, start=1)))


def write_latent(path, latent) -> None:
    write_rows(
        path,
        ["individual_id", "b", "e", "duration", "detected", "selected"],
        ((e.individual_id, e.b, e.e, e.d, int(e.detected), int(e.selected)) for e in latent),
    )


def write_draws(path, draws) -> None:
    """One row per draw: chain, iter, lp, then every parameter."""
    rows = (
        (int(c), int(i), float(lp), *map(float, row))
        for c, i, lp, row in zip(draws.chain, draws.iteration, draws.lp, draws.draws)
    )
    write_rows(path, ["chain", "iter", "lp", *draws.names], rows)


def load_draws(path):
    """Inverse of :func:`write_draws`; returns a ``PosteriorDraws``."""
    from .sampler import PosteriorDraws

    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "file is empty") from None
        if head[:3] != ["chain", "iter", "lp"]:
            raise ParseError(path, 1, "header must start with chain,iter,lp")
        body = []
        for row in reader:
            if len(row) != len(head):
                raise ParseError(path, reader.line_num, f"expected {len(head)} fields")
            try:
                body.append([float(v) for v in row])
            except ValueError:
                raise ParseError(path, reader.line_num, "non-numeric value") from None
    if not body:
        raise ParseError(path, 2, "no draws")
    arr = np.array(body)
    return PosteriorDraws(
        draws=arr[:, 3:],
        lp=arr[:, 2],
        chain=arr[:, 0].astype(int),
        iteration=arr[:, 1].astype(int),
        names=head[3:],
    )


def write_survival(path, summary) -> None:
    write_rows(
        path,
        ["t", "median", "lo95", "hi95"],
        zip(summary.t.tolist(), summary.median, summary.lo95, summary.hi95),
    )


def write_weights(path, weights) -> None:
    """Columns ``t, m, m2``: counts of start days whose survival argument is ``t``."""
    write_rows(
        path,
        ["t", "m", "m2"],
        ((t, int(a), int(b)) for t, (a, b) in enumerate(zip(weights.m, weights.m2), start=1)),
    )


def write_key_values(path, items: dict) -> None:
    write_rows(path, ["key", "value"], items.items())
