import numpy as np
import pytest

from episurv.core import EpisodeDataset, ObservedEpisode, TestSchedule


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny_dataset():
    """Three weekly-tested individuals, two with a detected episode."""
    schedules = [
        TestSchedule("a", (0, 7, 14, 21, 28)),
        TestSchedule("b", (-3, 4, 11, 18, 25)),
        TestSchedule("c", (0, 14, 28)),
    ]
    episodes = [
        ObservedEpisode("a", 1, 7, 14, 20),
        ObservedEpisode("b", 5, 11, 11, 17),
    ]
    return EpisodeDataset(episodes, schedules, period_end=14)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record a one-line verdict that is echoed in the terminal summary."""

    def _record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
