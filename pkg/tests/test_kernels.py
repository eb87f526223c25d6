import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit, gammaln

from gridfrag import kernels

IMPLS = sorted(kernels.implementations())


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in kernels.implementations()


@pytest.mark.parametrize("impl", IMPLS)
def test_logistic_sum_matches_direct_sum(impl):
    rng = np.random.default_rng(0)
    u = rng.normal(0, 20, 50)
    v = rng.normal(0, 20, 30)
    want = expit(u[:, None] - v[None, :]).sum(axis=1)
    np.testing.assert_allclose(kernels.logistic_sum(u, v, impl=impl), want, rtol=1e-12)


@pytest.mark.parametrize("impl", IMPLS)
def test_logistic_sum_is_finite_at_extremes(impl):
    out = kernels.logistic_sum(np.array([-1e6, 0.0, 1e6]), np.array([0.0]), impl=impl)
    assert np.all(np.isfinite(out))
    assert out[0] < 1e-300 and out[1] == 0.5 and out[2] == 1.0


@pytest.mark.parametrize("impl", IMPLS)
def test_poisson_loglik_matches_scipy(impl):
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 40, (40, 2))
    alpha, beta = np.array([25.0, 10.0]), np.array([0.3, 0.05])
    lam = 50 * expit((x - alpha) @ beta)
    y = rng.poisson(lam).astype(float)
    hours = np.ones(40)
    got = kernels.poisson_loglik(x, y, hours, alpha, beta, 50, impl=impl)
    # kernel omits log y!, which does not depend on the parameters
    want = stats.poisson.logpmf(y, lam).sum() + gammaln(y + 1).sum()
    assert got == pytest.approx(want, rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("impl", IMPLS)
def test_poisson_mixture_pmf_against_scipy(impl):
    lam = np.array([0.5, 3.0, 40.0, 250.0])
    mean, sq = kernels.poisson_mixture_pmf(lam, 400, impl=impl)
    pmf = stats.poisson.pmf(np.arange(401)[None, :], lam[:, None])
    np.testing.assert_allclose(mean, pmf.mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(sq, (pmf**2).mean(axis=0), atol=1e-15)


@given(
    u=st.lists(st.floats(-800, 800), min_size=1, max_size=20),
    v=st.lists(st.floats(-800, 800), min_size=1, max_size=20),
)
def test_backends_agree(u, v):
    u, v = np.array(u), np.array(v)
    outs = [kernels.logistic_sum(u, v, impl=i) for i in IMPLS]
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], rtol=1e-12, atol=1e-300)


def test_pure_python_override():
    env = dict(os.environ, GRIDFRAG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from gridfrag import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
