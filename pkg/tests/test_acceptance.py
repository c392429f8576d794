"""End-to-end acceptance checks, one test per criterion.

Each test records a verdict line that appears in the pytest terminal summary
under "acceptance criteria". Criteria 6 and 7 fit the full-size simulation
three times and take several minutes each.
"""

import time

import numpy as np
import pytest

from episurv import oracle
from episurv.core import EpisodeDataset, ObservedEpisode, StartWindow, TestSchedule
from episurv.diagnostics import mcse_mean
from episurv.estimator import DurationEstimator
from episurv.likelihood import (
    LogPosterior,
    NTotPrior,
    SensitivityModel,
    log_posterior_gradient,
    one_minus_piu,
    one_minus_piu_prime,
    p_ik,
    p_ik_prime,
)
from episurv.priors import WeakHazardPrior
from episurv.sampler import SamplerConfig, sample
from episurv.simulator import (
    SensitivityScenario,
    survey_schedules,
    geometric_with_bump,
    simulate,
)
from episurv.validation import check_eta, check_false_negatives, check_partition, check_weights, random_case

N_SCHEDULES = 20_000
N_D = 500
SENS = 0.8
SCHEDULE_SEED, SIM_SEED, FIT_SEED = 2024, 7, 1


def test_criterion_1_partition(report):
    start = time.perf_counter()
    results = check_partition(100, np.random.default_rng(101))
    elapsed = time.perf_counter() - start
    dev = max(r.max_abs_dev for r in results)
    ok = all(r.passed for r in results) and elapsed < 30
    report(1, ok, f"max |dev| {dev:.2e} (tol 1e-12), {elapsed:.1f}s (limit 30s)")
    assert ok


def test_criterion_2_false_negatives(report):
    rng = np.random.default_rng(202)
    results = check_false_negatives(100, rng)
    dev = max(r.max_abs_dev for r in results)
    reduce_dev = 0.0
    for _ in range(100):
        sched, h, window, T = random_case(rng)
        one = SensitivityModel(1.0)
        reduce_dev = max(
            reduce_dev,
            abs(one_minus_piu_prime(sched, h, one, window, T) - one_minus_piu(sched, h, window, T)),
        )
        for nu in oracle.enumerate_outcomes(sched, h, window, T).masses:
            ep = ObservedEpisode(sched.individual_id, *nu)
            a = p_ik_prime(ep, h, one, window, check_span=False)
            reduce_dev = max(reduce_dev, abs(a - p_ik(ep, h, window, check_span=False)))
    ok = all(r.passed for r in results) and reduce_dev <= 1e-15
    report(2, ok, f"max |dev| {dev:.2e} (tol 1e-12), p_sens=1 reduction {reduce_dev:.2e} (tol 1e-15)")
    assert ok


def test_criterion_3_eta(report):
    start = time.perf_counter()
    (result,) = check_eta(10, np.random.default_rng(303), n_d=5, mu=20.0, r=3.0)
    elapsed = time.perf_counter() - start
    ok = result.passed and elapsed < 5
    report(3, ok, f"max |dev| {result.max_abs_dev:.2e} (tol 1e-8), {elapsed:.2f}s (limit 5s)")
    assert ok


def gradient_dataset() -> EpisodeDataset:
    schedules = [
        TestSchedule(f"w{i}", tuple(int(d) for d in np.arange(-(i % 7), 120, 7))) for i in range(200)
    ]
    out = simulate(
        schedules, geometric_with_bump(), SensitivityScenario.constant(SENS), 50, 3,
        period_end=30, pre_period=20,
    )
    return out.dataset


def test_criterion_4_gradient(report):
    start = time.perf_counter()
    data = gradient_dataset()
    assert (data.n_d, data.n_cohort) == (50, 200)
    post = LogPosterior(
        data, WeakHazardPrior(), NTotPrior(100.0, 1.0), SensitivityModel(SENS), StartWindow(-19, 30)
    )
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(-2.5, 1.0, post.dim)
        g = log_posterior_gradient(post, x)
        fd = np.empty_like(g)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = 1e-5
            fd[i] = (post(x + e) - post(x - e)) / 2e-5
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 60
    report(4, ok, f"max relative error {worst:.2e} (tol 1e-6), {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_5_dot_product(report):
    (result,) = check_weights(50, np.random.default_rng(505))
    report(5, result.passed, f"max |dev| {result.max_abs_dev:.2e} over 50 cohorts (tol 1e-12)")
    assert result.passed


@pytest.fixture(scope="module")
def recovery():
    schedules = survey_schedules(N_SCHEDULES, np.random.default_rng(SCHEDULE_SEED))
    truth = geometric_with_bump()
    sim = simulate(schedules, truth, SensitivityScenario.constant(SENS), N_D, SIM_SEED)
    fits = {}

    def fit(p_sens):
        if p_sens not in fits:
            start = time.perf_counter()
            est = DurationEstimator(
                p_sens=p_sens,
                detect_fraction=sim.retained_fraction,
                r=1.0,
                b_min=-99,
                b_max=58,
                chains=4,
                warmup=1000,
                draws=1000,
                seed=FIT_SEED,
            ).fit(sim.dataset)
            fits[p_sens] = (est, time.perf_counter() - start)
        return fits[p_sens]

    return truth, fit


def test_criterion_6_recovery(recovery, report):
    truth, fit = recovery
    est, elapsed = fit(SENS)
    t = np.arange(1, 31)
    s_true = truth.survival(31)[:30]
    lo, hi = est.predict_interval(t)
    coverage = np.mean((lo <= s_true) & (s_true <= hi))
    dev = np.abs(est.predict(t[:21]) - s_true[:21])
    ok = coverage >= 0.85 and dev.max() < 0.07 and elapsed < 15 * 60
    report(
        6,
        ok,
        f"coverage {coverage:.2f} (need >= 0.85), max |median - S| for t <= 21 "
        f"{dev.max():.3f} at t={int(np.argmax(dev)) + 1} (need < 0.07), max R-hat "
        f"{est.max_rhat():.3f}, {elapsed:.0f}s",
    )
    assert coverage >= 0.85
    assert dev.max() < 0.07
    assert elapsed < 15 * 60


def s30_summary(est):
    draws = est.draws_.hazards()
    s30 = np.prod(1.0 - draws[:, :29], axis=1)
    q25, q50, q75 = np.quantile(s30, [0.25, 0.5, 0.75])
    return q50, q75 - q25


def test_criterion_7_misspecification(recovery, report):
    truth, fit = recovery
    s_true = truth.survival(31)[29]
    low, t_low = fit(0.6)
    high, t_high = fit(1.0)
    med_low, iqr_low = s30_summary(low)
    med_high, iqr_high = s30_summary(high)
    above = med_low - s_true > iqr_low
    below = s_true - med_high > iqr_high
    ok = above and below and max(t_low, t_high) < 15 * 60
    report(
        7,
        ok,
        f"true S(30) {s_true:.3f}; p_sens=0.6 median {med_low:.3f} (IQR {iqr_low:.3f}); "
        f"p_sens=1.0 median {med_high:.3f} (IQR {iqr_high:.3f})",
    )
    assert above
    assert below


def test_criterion_8_prior_sanity(report):
    start = time.perf_counter()
    empty = EpisodeDataset([], [], period_end=58)
    post = LogPosterior(empty, WeakHazardPrior(), NTotPrior(10.0, 1.0), SensitivityModel(1.0), d_max=11)
    draws = sample(post, SamplerConfig(chains=4, warmup=500, draws=1000, seed=3))
    lam = draws.hazards()
    z = []
    for j in range(lam.shape[1]):
        x = np.stack([lam[draws.chain == c, j] for c in range(4)])
        z.append(abs(x.mean() - 0.05) / mcse_mean(x))
    elapsed = time.perf_counter() - start
    ok = max(z) < 3 and elapsed < 60
    report(8, ok, f"largest |mean - 0.05| / MCSE {max(z):.2f} over {len(z)} hazards (need < 3), {elapsed:.1f}s")
    assert ok


def test_criterion_9_determinism(tmp_path, report):
    from episurv.cli import main

    args = ["--set", "n_schedules=3000", "--set", "n_d=100"]
    fit_args = ["--set", "chains=2", "--set", "warmup=150", "--set", "draws=100"]
    files = ("schedules.csv", "episodes.csv", "draws.csv", "diagnostics.csv", "survival.csv", "mean_duration.csv")
    runs = []
    for name in ("first", "second"):
        d = tmp_path / name
        assert main(["simulate", "--out", str(d), "--seed", "9", *args]) == 0
        assert main(["fit", "--config", str(d / "fit.toml"), "--out", str(d), *fit_args]) == 0
        assert main(["summarize", "--out", str(d)]) == 0
        runs.append({f: (d / f).read_bytes() for f in files})
    ok = runs[0] == runs[1]
    report(9, ok, f"{len(files)} output files byte-identical across two runs")
    assert ok
