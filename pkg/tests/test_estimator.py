import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from episurv.core import ConfigurationError, DomainError, StartWindow
from episurv.estimator import DurationEstimator, ModelConfig, check_dataset, fit_posterior
from episurv.priors import BetaProcessPrior, WeakHazardPrior
from episurv.sampler import SamplerConfig

QUICK = dict(chains=2, warmup=100, draws=80, seed=4)


class TestModelConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"p_sens": 0.0},
            {"p_sens": 1.1},
            {"mu": -1.0},
            {"r": 0.0},
            {"detect_fraction": 0.0},
            {"prior": "flat"},
            {"alpha0": 0.0},
            {"b_min": 1},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigurationError):
            ModelConfig(**kwargs)

    def test_window(self):
        assert ModelConfig().window(58) == StartWindow(1, 58)
        assert ModelConfig(b_min=-99, b_max=58).window(58) == StartWindow(-99, 58)

    def test_n_tot_prior(self):
        assert ModelConfig(mu=30.0, r=2.0).n_tot_prior(5).mu == 30.0
        prior = ModelConfig(detect_fraction=0.25).n_tot_prior(50)
        assert prior.mu == pytest.approx(200.0) and prior.r == 1.0
        with pytest.raises(ConfigurationError):
            ModelConfig().n_tot_prior(5)

    def test_hazard_prior_kinds(self):
        assert isinstance(ModelConfig().hazard_prior(), WeakHazardPrior)
        assert isinstance(ModelConfig(prior="beta_process").hazard_prior(), BetaProcessPrior)


def test_check_dataset_type():
    with pytest.raises(TypeError):
        check_dataset([1, 2])


def test_get_set_params():
    est = DurationEstimator(p_sens=0.7, chains=2)
    params = est.get_params()
    assert params["p_sens"] == 0.7 and params["algorithm"] == "nuts"
    est.set_params(p_sens=0.9)
    assert clone(est).p_sens == 0.9


def test_not_fitted():
    with pytest.raises(NotFittedError):
        DurationEstimator().predict([1, 2])


def test_fit_predict(tiny_dataset):
    est = DurationEstimator(mu=10.0, **QUICK).fit(tiny_dataset)
    d = est.d_max_
    s = est.predict(np.arange(1, d + 3))
    assert s[0] == 1.0
    assert np.all(np.diff(s) <= 0)
    assert s[-1] == 0.0 and s[-2] == 0.0
    lo, hi = est.predict_interval([1, 2, d + 1])
    assert np.all(lo <= hi)
    assert lo[-1] == hi[-1] == 0.0
    assert np.isfinite(est.max_rhat())
    with pytest.raises(DomainError):
        est.predict([0])
    with pytest.raises(DomainError):
        est.predict([1.5])


def test_fit_posterior_matches_estimator(tiny_dataset):
    model = ModelConfig(mu=10.0)
    draws = fit_posterior(tiny_dataset, model, SamplerConfig(**QUICK))
    est = DurationEstimator(mu=10.0, **QUICK).fit(tiny_dataset)
    np.testing.assert_array_equal(draws.draws, est.draws_.draws)
