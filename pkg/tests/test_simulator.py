import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from episurv import oracle
from episurv.core import DomainError, HazardVector, StartWindow, TestSchedule
from episurv.simulator import (
    InsufficientDetectionsError,
    SensitivityScenario,
    TruthDistribution,
    survey_schedules,
    geometric_with_bump,
    simulate,
    splice_truth,
    v_of_t,
)


def truth_hazards(truth: TruthDistribution, d_max: int) -> HazardVector:
    s = truth.survival(d_max)
    lam = 1.0 - s[1:] / np.where(s[:-1] > 0, s[:-1], 1.0)
    return HazardVector(np.clip(lam, 0.0, 1.0))


class TestSensitivityProfile:
    def test_values(self):
        assert v_of_t(0) == pytest.approx(0.9)
        assert v_of_t(50) == pytest.approx(0.5)
        assert v_of_t(100) == pytest.approx(0.5)
        assert v_of_t(25) == pytest.approx(0.7)

    def test_vectorised_and_domain(self):
        np.testing.assert_allclose(v_of_t([0, 50, 51]), [0.9, 0.5, 0.5])
        with pytest.raises(DomainError):
            v_of_t(-1)

    def test_scenarios(self):
        assert np.all(SensitivityScenario.constant(0.8)(np.arange(5)) == 0.8)
        np.testing.assert_allclose(SensitivityScenario.varying()(np.array([0, 50])), [0.9, 0.5])
        with pytest.raises(DomainError):
            SensitivityScenario.constant(1.2)
        with pytest.raises(DomainError):
            SensitivityScenario("sometimes", 0.5)


class TestTruth:
    def test_normalises(self):
        t = TruthDistribution([1.0, 3.0])
        np.testing.assert_allclose(t.pmf, [0.25, 0.75])
        np.testing.assert_allclose(t.survival(4), [1.0, 0.75, 0.0, 0.0])
        assert t.mean() == pytest.approx(1.75)

    @pytest.mark.parametrize("pmf", [[], [0.0, 0.0], [-1.0, 2.0], [np.nan]])
    def test_rejects(self, pmf):
        with pytest.raises(DomainError):
            TruthDistribution(pmf)

    def test_default_shape(self):
        t = geometric_with_bump()
        assert t.pmf.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.argmax(t.pmf) == 0
        plain = geometric_with_bump(bump_weight=0.0)
        assert t.pmf[34] > 2 * plain.pmf[34]
        assert t.pmf[0] < plain.pmf[0]


class TestSplice:
    def test_identical(self):
        t = geometric_with_bump()
        np.testing.assert_allclose(splice_truth(t, t).pmf, t.pmf, atol=1e-15)

    def test_point_masses(self):
        head = TruthDistribution(np.eye(50)[4])
        tail = TruthDistribution(np.eye(50)[39])
        out = splice_truth(head, tail, 30)
        assert out.pmf[4] == pytest.approx(0.5)
        assert out.pmf[39] == pytest.approx(0.5)

    def test_empty_result(self):
        head = TruthDistribution(np.eye(50)[39])
        tail = TruthDistribution(np.eye(50)[4])
        with pytest.raises(DomainError):
            splice_truth(head, tail, 30)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(0.01, 1), min_size=40, max_size=60),
        st.lists(st.floats(0.01, 1), min_size=40, max_size=60),
        st.integers(1, 39),
    )
    def test_sums_to_one(self, a, b, cut):
        out = splice_truth(TruthDistribution(a), TruthDistribution(b), cut)
        assert out.pmf.sum() == pytest.approx(1.0, abs=1e-12)


class TestSchedules:
    def test_cadence(self, rng):
        for s in survey_schedules(200, rng):
            days = np.array(s.test_days)
            assert np.sum(days <= 0) <= 1
            assert np.any((days >= 1) & (days <= 58))
            gaps = np.diff(days)
            assert set(gaps.tolist()) <= {7, 21, 28} | set(range(1, 400))
            assert np.all(gaps > 0)

    def test_deterministic(self):
        a = survey_schedules(20, np.random.default_rng(1))
        b = survey_schedules(20, np.random.default_rng(1))
        assert a == b


def weekly_cohort(n):
    days = (0, 7, 14, 21, 28, 56, 84)
    return [TestSchedule(f"i{j}", days) for j in range(n)]


class TestSimulate:
    def test_interval_example(self):
        # a ten-day episode overlapping the tests on days 7 and 14 only
        truth = TruthDistribution(np.eye(12)[9])
        sched = [TestSchedule("x", (0, 7, 14, 21))]
        seen = 0
        for seed in range(400):
            try:
                out = simulate(sched, truth, SensitivityScenario.constant(1.0), 1, seed, period_end=14)
            except InsufficientDetectionsError:
                continue
            lat = out.latent[0]
            if 1 <= lat.b <= 7 and 14 <= lat.e <= 20:
                e = out.dataset.episodes[0]
                assert (e.l_b, e.r_b, e.l_e, e.r_e) == (1, 7, 14, 20)
                seen += 1
        assert seen > 0

    def test_deterministic(self):
        sch = weekly_cohort(300)
        a = simulate(sch, geometric_with_bump(), SensitivityScenario.constant(0.8), 20, 4)
        b = simulate(sch, geometric_with_bump(), SensitivityScenario.constant(0.8), 20, 4)
        assert a.dataset.episodes == b.dataset.episodes
        assert a.latent == b.latent
        assert a.retained_fraction == b.retained_fraction

    def test_latent_inside_intervals_for_perfect_tests(self):
        sch = weekly_cohort(2000)
        out = simulate(sch, geometric_with_bump(), SensitivityScenario.constant(1.0), 100, 9)
        latent = {l.individual_id: l for l in out.latent}
        for ep in out.dataset.episodes:
            lat = latent[ep.individual_id]
            assert lat.selected and lat.detected
            assert ep.l_b <= lat.b <= ep.r_b
            assert ep.l_e <= lat.e <= ep.r_e

    def test_no_false_positives(self):
        sch = survey_schedules(2000, np.random.default_rng(3))
        out = simulate(sch, geometric_with_bump(), SensitivityScenario.varying(), 50, 2)
        latent = {l.individual_id: l for l in out.latent}
        for ep in out.dataset.episodes:
            lat = latent[ep.individual_id]
            assert lat.b <= ep.r_b and ep.l_e <= lat.e
            for day, result in ep.intermediate_results:
                if result:
                    assert lat.b <= day <= lat.e

    def test_start_window_and_one_episode_each(self):
        sch = weekly_cohort(1000)
        out = simulate(sch, geometric_with_bump(), SensitivityScenario.constant(1.0), 10, 1)
        b = np.array([l.b for l in out.latent])
        assert b.min() >= -99 and b.max() <= 58
        assert len(out.latent) == 1000
        assert out.start_range == (-99, 58)
        assert sum(l.selected for l in out.latent) == 10

    def test_retained_fraction_matches_oracle(self):
        n = 20000
        sch = weekly_cohort(n)
        truth = geometric_with_bump()
        out = simulate(sch, truth, SensitivityScenario.constant(1.0), 0, 12)
        enum = oracle.enumerate_outcomes(sch[0], truth_hazards(truth, 160), StartWindow(-99, 58), 58)
        p = 1.0 - enum.undetected
        se = np.sqrt(p * (1 - p) / n)
        assert abs(out.retained_fraction - p) < 3 * se

    def test_durations_follow_truth(self):
        n = 100_000
        days = (0, 400)
        sch = [TestSchedule(f"i{j}", days) for j in range(n)]
        truth = geometric_with_bump(max_duration=60)
        out = simulate(sch, truth, SensitivityScenario.constant(1.0), 0, 21)
        d = np.array([l.d for l in out.latent])
        obs = np.bincount(d, minlength=61)[1:]
        exp = truth.pmf * n
        # pool the sparse tail into one cell
        keep = exp >= 5
        o, e = obs[keep], exp[keep]
        if not keep.all():
            o, e = np.r_[o, obs[~keep].sum()], np.r_[e, exp[~keep].sum()]
        assert chisquare(o, e).pvalue > 1e-3

    def test_length_bias(self):
        sch = survey_schedules(5000, np.random.default_rng(8))
        truth = geometric_with_bump()
        out = simulate(sch, truth, SensitivityScenario.constant(0.8), 0, 5)
        detected = [l.d for l in out.latent if l.detected]
        assert np.mean(detected) > truth.mean()

    def test_insufficient(self):
        with pytest.raises(InsufficientDetectionsError) as err:
            simulate(weekly_cohort(10), geometric_with_bump(), SensitivityScenario.constant(1.0), 50, 1)
        assert err.value.requested == 50
        assert err.value.achieved < 50
