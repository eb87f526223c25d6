import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logit

from gridfrag.errors import ContractError, NoInformationError, PriorConstructionError, SamplerDegenerateWarning
from gridfrag.fragility import FragilityParams, system_failure_rate
from gridfrag.inference import (
    EmpiricalPrior,
    LogLikelihoodContext,
    PosteriorChain,
    block_bootstrap_rows,
    bootstrap_prior,
    fit_mle,
    log_likelihood,
    posterior_summary,
    read_chain,
    run_metropolis_hastings,
    write_chain,
)
from gridfrag.population import PopulationSpec, draw_population, simulate_failures
from gridfrag.stress import StressDistribution, synthesize_stress

from conftest import make_record, make_series

W = ("wind_speed",)


def ctx_for(x, y, n):
    return LogLikelihoodContext(make_series(x), make_record(y), n)


@pytest.fixture(scope="module")
def base_data():
    """Ten years of hourly wind with a homogeneous population at 65 m/s."""
    stress = synthesize_stress(StressDistribution("wind_speed", 2.0, 0.4), 87_600, 21, resolution=0.1)
    pop = draw_population(PopulationSpec(10_000, "wind_speed", 65.0, 0.0, 0.2), 0)
    rec = simulate_failures(pop, stress, 22)
    return LogLikelihoodContext(stress, rec, 10_000)


def test_single_step_value():
    # N = 2 at the midpoint gives lambda = 1
    ctx = ctx_for([65.0], [2], 2)
    ll = log_likelihood(ctx, FragilityParams(W, [65.0], [0.2]))
    assert ll == pytest.approx(2 * 0 - 1 - math.log(2), abs=1e-14)
    assert ll == pytest.approx(-1.6931, abs=1e-4)


def test_zero_counts_constant_rate():
    p = FragilityParams(W, [65.0], [0.2])
    ctx = ctx_for(np.full(40, 60.0), np.zeros(40), 10_000)
    lam = system_failure_rate(p, 60.0, 10_000)
    assert log_likelihood(ctx, p) == pytest.approx(-40 * lam, rel=1e-13)


def test_vacuous_hour():
    p = FragilityParams(W, [65.0], [5.0])
    a = ctx_for([66.0, 64.0], [3, 1], 10)
    b = ctx_for([66.0, 64.0, 0.0], [3, 1, 0], 10)
    assert log_likelihood(b, p) == pytest.approx(log_likelihood(a, p), rel=1e-15, abs=1e-15)


def test_grouping_matches_hourly_sum():
    rng = np.random.default_rng(3)
    x = rng.choice([10.0, 20.0, 30.0], 200)
    y = rng.poisson(3, 200)
    p = FragilityParams(W, [25.0], [0.15])
    lam = 50 * stats.logistic.cdf(0.15 * (x - 25.0))
    assert log_likelihood(ctx_for(x, y, 50), p) == pytest.approx(stats.poisson.logpmf(y, lam).sum(), rel=1e-12)


@given(
    alpha=st.floats(5, 80), beta=st.floats(0.02, 2.0),
    data=st.lists(st.tuples(st.floats(0, 100), st.integers(0, 40)), min_size=1, max_size=30),
)
def test_log_likelihood_property(alpha, beta, data):
    x = np.array([d[0] for d in data])
    y = np.array([d[1] for d in data])
    order = np.argsort(x, kind="stable")
    p = FragilityParams(W, [alpha], [beta])
    lam = 100 * stats.logistic.cdf(beta * (x - alpha))
    want = stats.poisson.logpmf(y, np.maximum(lam, 1e-300)).sum()
    got = log_likelihood(ctx_for(x[order], y[order], 100), p)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_mle_closed_form_two_hours():
    # two distinct hours saturate the model: N g(x_t) = y_t exactly
    x, y, n = np.array([50.0, 70.0]), np.array([100, 3000]), 10_000
    l1, l2 = logit(y / n)
    beta = (l2 - l1) / (x[1] - x[0])
    alpha = x[0] - l1 / beta
    res = fit_mle(ctx_for(x, y, n))
    assert res.converged
    assert res.params.alpha[0] == pytest.approx(alpha, abs=1e-6)
    assert res.params.beta[0] == pytest.approx(beta, abs=1e-6)


def test_mle_recovers_threshold(base_data):
    res = fit_mle(base_data)
    assert res.converged
    assert abs(res.params.alpha[0] / 65 - 1) < 0.05
    assert abs(res.params.beta[0] / 0.2 - 1) < 0.1


def test_mle_fixed_point(base_data):
    first = fit_mle(base_data)
    again = fit_mle(base_data, first.params)
    np.testing.assert_allclose(again.params.working(), first.params.working(), atol=1e-6)
    assert again.log_lik >= first.log_lik - 1e-9


def test_mle_no_information():
    with pytest.raises(NoInformationError):
        fit_mle(ctx_for([10.0, 20.0], [0, 0], 100))


def test_block_bootstrap_rows():
    rng = np.random.default_rng(0)
    rows = block_bootstrap_rows(1000, 168, rng)
    assert rows.size == 1000 and rows.min() >= 0 and rows.max() < 1000
    np.testing.assert_array_equal(block_bootstrap_rows(50, 50, rng), np.arange(50))


def test_bootstrap_prior_consistent(base_data):
    mle = fit_mle(base_data).params.working()
    prior = bootstrap_prior(base_data, 10, 168, 1)
    sd = np.sqrt(np.diag(prior.cov))
    assert np.all(np.abs(prior.mean - mle) <= 3 * sd)


def test_bootstrap_full_block_is_degenerate(base_data):
    prior = bootstrap_prior(base_data, 10, base_data.n_obs, 1)
    assert np.allclose(prior.cov, 0.0)
    assert prior.is_degenerate()


def test_bootstrap_prior_spread(base_data):
    prior = bootstrap_prior(base_data, 200, 168, 2)
    sd_alpha = math.sqrt(prior.cov[0, 0])
    assert 0 < sd_alpha < 0.1 * prior.mean[0]


def test_bootstrap_failures_raise():
    # one failure in the first hour is rarely covered by a resampled block
    y = np.zeros(1000, dtype=int)
    y[0] = 1
    x = np.linspace(1.0, 30.0, 1000)
    ctx = ctx_for(x, y, 10)
    with pytest.raises(PriorConstructionError):
        bootstrap_prior(ctx, 20, 10, 0, init=FragilityParams(W, [40.0], [0.2]))


def test_bootstrap_needs_ten_replicates(base_data):
    with pytest.raises(ContractError):
        bootstrap_prior(base_data, 5)


def test_prior_validation_and_round_trip():
    with pytest.raises(ContractError):
        EmpiricalPrior(W, [1.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
    p = EmpiricalPrior(W, [60.0, math.log(0.2)], [[4.0, 0.1], [0.1, 0.01]], 50, 0)
    q = EmpiricalPrior.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.mean, p.mean)
    np.testing.assert_array_equal(q.cov, p.cov)
    logpdf = p.logpdf_factory()
    w = np.array([61.0, -1.5])
    assert logpdf(w) == pytest.approx(stats.multivariate_normal(p.mean, p.cov).logpdf(w), rel=1e-12)


def _small_ctx():
    stress = synthesize_stress(StressDistribution("wind_speed", 2.5, 0.4), 4000, 5, resolution=0.1)
    pop = draw_population(PopulationSpec(500, "wind_speed", 25.0, 0.0, 0.3), 0)
    return LogLikelihoodContext(stress, simulate_failures(pop, stress, 6), 500)


def test_chain_reproducible_and_tuned():
    ctx = _small_ctx()
    prior = bootstrap_prior(ctx, 20, 168, 0)
    a = run_metropolis_hastings(ctx, prior, 6000, 2000, 0.25, 3)
    b = run_metropolis_hastings(ctx, prior, 6000, 2000, 0.25, 3)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_array_equal(a.accepted, b.accepted)
    assert 0.15 <= a.acceptance_rate() <= 0.35
    # the scale is frozen after burn-in
    assert np.all(a.scale[2000:] == a.scale[2000])


def test_improving_proposals_always_accepted():
    ctx = _small_ctx()
    prior = bootstrap_prior(ctx, 20, 168, 0)
    chain = run_metropolis_hastings(ctx, prior, 3000, 1000, 0.25, 8)
    # rebuild the proposals from the sampler's random stream
    rng = np.random.default_rng(8)
    jumps = rng.standard_normal((3000, 2)) @ np.linalg.cholesky(prior.effective_cov()).T
    logprior = prior.logpdf_factory()

    def logpost(w):
        return logprior(w) + log_likelihood(ctx, FragilityParams.from_working(W, w)) + ctx.log_factorial

    w_prev = prior.mean
    checked = 0
    for k in range(3000):
        prop = w_prev + chain.scale[k] * jumps[k]
        if logpost(prop) > logpost(w_prev):
            assert chain.accepted[k]
            checked += 1
        w_prev = np.array([chain.alpha[k, 0], math.log(chain.beta[k, 0])])
    assert checked > 100


def test_degenerate_prior_warns():
    ctx = _small_ctx()
    prior = EmpiricalPrior(W, [25.0, math.log(0.3)], np.zeros((2, 2)))
    with pytest.warns(SamplerDegenerateWarning):
        chain = run_metropolis_hastings(ctx, prior, 2000, 500, 0.25, 0)
    assert np.all(np.isfinite(chain.alpha))


def test_chain_settings_validated():
    ctx = _small_ctx()
    prior = EmpiricalPrior(W, [25.0, math.log(0.3)], np.eye(2) * 0.01)
    with pytest.raises(ContractError):
        run_metropolis_hastings(ctx, prior, 100, 100)
    with pytest.raises(ContractError):
        run_metropolis_hastings(ctx, prior, 100, 10, target_accept=1.0)


def _chain_from(alpha, beta, burn_in=0):
    n = alpha.size
    return PosteriorChain(W, alpha[:, None], beta[:, None], np.ones(n, bool), np.ones(n), burn_in)


def test_summary_of_constant_chain():
    s = posterior_summary(_chain_from(np.full(500, 61.0), np.full(500, 0.2)))
    a = s["alpha_wind_speed"]
    assert a["std"] == 0.0
    assert all(a[k] == 61.0 for k in ("mean", "p5", "p25", "p50", "p75", "p95"))


def test_summary_quantiles():
    rng = np.random.default_rng(0)
    s = posterior_summary(_chain_from(rng.normal(50, 2, 100_000), np.full(100_000, 0.2)))["alpha_wind_speed"]
    for q in (5, 25, 50, 75, 95):
        assert s[f"p{q}"] == pytest.approx(stats.norm(50, 2).ppf(q / 100), rel=0.01)


def test_summary_needs_samples():
    with pytest.raises(ContractError):
        posterior_summary(_chain_from(np.ones(150), np.ones(150), burn_in=100))


def test_chain_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    c = _chain_from(rng.normal(50, 1, 300), rng.uniform(0.1, 0.3, 300), burn_in=100)
    write_chain(c, tmp_path / "c.csv", {"scenario": "x"})
    back = read_chain(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.alpha, c.alpha)
    np.testing.assert_array_equal(back.beta, c.beta)
    assert back.burn_in == 100
