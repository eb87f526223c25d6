"""Numpy implementations of the inner loops, used when the extension is absent."""

import numpy as np
from scipy import stats
from scipy.special import expit

CLAMP = 700.0
RATE_FLOOR = 1e-300

# cap on temporary matrix size in the chunked loops
_BLOCK = 1 << 21


def logistic_sum(u, v):
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    out = np.zeros(u.shape[0])
    if v.size == 0:
        return out
    step = max(1, _BLOCK // v.size)
    for start in range(0, u.size, step):
        eta = np.clip(u[start:start + step, None] - v[None, :], -CLAMP, CLAMP)
        out[start:start + step] = expit(eta).sum(axis=1)
    return out


def poisson_loglik(x, counts, hours, alpha, beta, n_components):
    eta = np.clip((x - alpha) @ beta, -CLAMP, CLAMP)
    lam = np.maximum(n_components * expit(eta), RATE_FLOOR)
    return float(np.dot(counts, np.log(lam)) - np.dot(hours, lam))


def poisson_mixture_pmf(lam, ymax):
    lam = np.asarray(lam, dtype=np.float64)
    support = np.arange(ymax + 1)
    mean = np.zeros(ymax + 1)
    sq = np.zeros(ymax + 1)
    if lam.size == 0:
        return mean, sq
    step = max(1, _BLOCK // (ymax + 1))
    for start in range(0, lam.size, step):
        pmf = stats.poisson.pmf(support[None, :], lam[start:start + step, None])
        mean += pmf.sum(axis=0)
        sq += (pmf * pmf).sum(axis=0)
    return mean / lam.size, sq / lam.size
