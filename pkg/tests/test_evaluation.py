import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit, logit

from gridfrag.errors import ContractError
from gridfrag.evaluation import (
    PredictiveDistribution,
    kl_divergence,
    mean_failure_curve,
    predictive_failure_distribution,
    signed_pointwise_divergence,
    write_divergence_rows,
)
from gridfrag.fragility import FragilityParams
from gridfrag.population import ComponentPopulation, PopulationSpec
from gridfrag.stress import StressDistribution

W = ("wind_speed",)


def _pop(alphas, beta=0.2):
    return ComponentPopulation(W, np.asarray(alphas, float)[:, None], np.array([beta]))


def test_point_mass_is_poisson():
    p = FragilityParams(W, [65.0], [0.2])
    pred = predictive_failure_distribution(p, np.array([60.0]), 100, 1000, 0)
    lam = 100 * expit(-1.0)
    np.testing.assert_allclose(pred.pmf, stats.poisson.pmf(pred.support, lam), rtol=1e-12, atol=1e-300)
    assert pred.tail < 1e-9
    assert stats.poisson.sf(pred.support[-1] - 1, lam) >= 1e-9


def test_two_point_mixture():
    pop = _pop([60.0, 70.0])
    pred = predictive_failure_distribution(pop, np.array([65.0]), 50, 20_000, 1)
    lam = 50 * expit(np.array([1.0, -1.0]))
    want = 0.5 * (stats.poisson.pmf(pred.support, lam[0]) + stats.poisson.pmf(pred.support, lam[1]))
    assert np.all(np.abs(pred.pmf - want) <= 5 * pred.std_error + 1e-15)


def test_mixture_variance_exceeds_point():
    # thresholds chosen so both sources have mean probability 0.4 at x = 50
    x = np.array([50.0])
    a1, a2 = 50 - logit(0.2) / 0.2, 50 - logit(0.6) / 0.2
    a0 = 50 - logit(0.4) / 0.2
    mix = predictive_failure_distribution(_pop([a1, a2]), x, 100, 20_000, 2)
    point = predictive_failure_distribution(FragilityParams(W, [a0], [0.2]), x, 100, 1000, 2)
    assert mix.mean() == pytest.approx(point.mean(), rel=0.02)
    assert mix.var() > point.var() * 1.5


def test_predictive_mean_matches_rate():
    spec = PopulationSpec(1000, "wind_speed", 20.0, 0.2, 0.2)
    dist = StressDistribution("wind_speed", 2.5, 0.4)
    pred = predictive_failure_distribution(spec, dist, 1000, 20_000, 3)
    assert pred.pmf.sum() == pytest.approx(1.0, abs=1e-8)
    assert pred.mean() > 0


def test_predictive_validation():
    with pytest.raises(ContractError):
        predictive_failure_distribution(FragilityParams(W, [1.0], [1.0]), np.array([1.0]), 10, 10)


def test_kl_identity():
    p = PredictiveDistribution(stats.poisson.pmf(np.arange(30), 4.0))
    assert kl_divergence(p, p) == 0.0


def test_kl_two_term():
    want = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(want, abs=1e-14)
    assert want == pytest.approx(0.5108, abs=1e-4)


def test_kl_smooths_missing_support():
    val = kl_divergence([0.5, 0.5], [1.0, 0.0])
    assert math.isfinite(val) and val > 5


@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=15).filter(lambda v: sum(v) > 1e-3),
    st.lists(st.floats(0, 1), min_size=1, max_size=15).filter(lambda v: sum(v) > 1e-3),
)
def test_kl_nonnegative(p, q):
    assert kl_divergence(p, q) >= 0.0


def test_signed_identity():
    p = FragilityParams(W, [65.0], [0.2])
    assert signed_pointwise_divergence(p, p, StressDistribution("wind_speed", 2.0, 0.4), 2000, 0) == 0.0


def test_signed_negative_when_fit_overpredicts():
    true = FragilityParams(W, [65.0], [0.2])
    fit = FragilityParams(W, [60.0], [0.2])
    assert signed_pointwise_divergence(true, fit, StressDistribution("wind_speed", 2.0, 0.4), 5000, 0) < 0


def test_signed_single_point():
    true = FragilityParams(W, [65.0], [0.2])
    fit = FragilityParams(W, [62.0], [0.25])
    x0 = 55.0
    gt, gf = expit(0.2 * (x0 - 65)), expit(0.25 * (x0 - 62))
    got = signed_pointwise_divergence(true, fit, np.array([x0]), 1000, 0)
    assert got == pytest.approx(gt * (math.log(gt) - math.log(gf)), rel=1e-12)


def test_signed_on_predictive_distributions():
    p = PredictiveDistribution(np.array([0.5, 0.5]))
    q = PredictiveDistribution(np.array([0.9, 0.1]))
    assert signed_pointwise_divergence(p, q) == pytest.approx(kl_divergence(p, q))


def test_mean_failure_curve_population():
    pop = _pop([60.0, 70.0])
    got = mean_failure_curve(pop, np.array([[65.0]]), n_theta=20_000, rng_seed=0)[0]
    assert got == pytest.approx(0.5, abs=0.01)


def test_divergence_rows(tmp_path):
    rows = [{"scenario": "a65_cov0", "cov": 0.0, "alpha_mean": 65.0, "metric": "kl_bhm", "level": "system", "value": 0.1}]
    write_divergence_rows(rows, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "scenario,cov,alpha_mean,metric,level,value"
    assert lines[1] == "a65_cov0,0.0,65.0,kl_bhm,system,0.1"
