"""Distances between true and fitted failure models, at system and component level."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from . import kernels
from .errors import ContractError
from .fragility import EXP_CLAMP, FragilityParams
from .inference import PosteriorChain
from .population import ComponentPopulation, PopulationSpec, _truncated_normal
from .stress import draw_stress

TAIL_MASS = 1e-9
SMOOTHING = 1e-12


def theta_features(source) -> tuple[str, ...]:
    return tuple(source.features)


def draw_theta(source, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` parameter vectors ``(alpha, beta)``, each of shape ``(n, p)``.

    Sources: a :class:`PopulationSpec` (normal thresholds truncated at zero), a
    :class:`ComponentPopulation` (uniform over components), a
    :class:`PosteriorChain` (uniform over post-burn-in states) or a single
    :class:`FragilityParams`.
    """
    if isinstance(source, FragilityParams):
        return np.tile(source.alpha, (n, 1)), np.tile(source.beta, (n, 1))
    if isinstance(source, PopulationSpec):
        cols = []
        for i in range(len(source.features)):
            sd = source.alpha_sd(i)
            if sd == 0:
                cols.append(np.full(n, float(source.alpha_mean[i])))
            else:
                cols.append(_truncated_normal(source.alpha_mean[i], sd, n, rng))
        return np.column_stack(cols), np.tile(np.asarray(source.beta, dtype=float), (n, 1))
    if isinstance(source, ComponentPopulation):
        idx = rng.integers(0, len(source), n)
        return source.alpha[idx], np.tile(source.beta, (n, 1))
    if isinstance(source, PosteriorChain):
        alpha, beta = source.post_burn_in()
        idx = rng.integers(0, alpha.shape[0], n)
        return alpha[idx], beta[idx]
    raise ContractError(f"unsupported parameter source {type(source).__name__}")


def _probabilities(alpha, beta, x):
    eta = np.clip(np.sum(beta * (x - alpha), axis=1), -EXP_CLAMP, EXP_CLAMP)
    return expit(eta)


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    """Failure-count pmf on ``0..len(pmf)-1``; ``std_error`` holds per-entry Monte Carlo errors."""

    pmf: np.ndarray
    provenance: str = ""
    std_error: np.ndarray | None = None
    tail: float = 0.0

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.pmf.size)

    def mean(self) -> float:
        return float(self.support @ self.pmf)

    def var(self) -> float:
        m = self.mean()
        return float(((self.support - m) ** 2) @ self.pmf)


def _truncation_point(lam: np.ndarray, tail: float) -> int:
    """Smallest ``y`` with ``mean_d P(Y_d > y) < tail``."""
    hi = int(max(stats.poisson.isf(tail * 1e-3, lam.max()), 0)) + 1

    def mixture_tail(y):
        return float(stats.poisson.sf(y, lam).mean())

    lo = 0
    if mixture_tail(lo) < tail:
        return 0
    while mixture_tail(hi) >= tail:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mixture_tail(mid) < tail:
            hi = mid
        else:
            lo = mid
    return hi


def predictive_failure_distribution(
    theta_source,
    stress_source,
    n_components: int,
    n_mc: int = 10_000,
    rng_seed: int = 0,
    provenance: str = "",
) -> PredictiveDistribution:
    """Monte Carlo estimate of ``P(y) = E_{x, theta}[Poisson(y; N g_theta(x))]``.

    Each draw pairs an independent stress vector with an independent parameter
    vector. The support stops at the smallest ``y_max`` whose mixture tail mass
    is below 1e-9.
    """
    if n_mc < 1000:
        raise ContractError(f"n_mc must be >= 1000, got {n_mc}")
    if n_components < 1:
        raise ContractError("n_components must be >= 1")
    rng = np.random.default_rng(rng_seed)
    features = theta_features(theta_source)
    alpha, beta = draw_theta(theta_source, n_mc, rng)
    x = draw_stress(stress_source, features, n_mc, rng)
    lam = n_components * _probabilities(alpha, beta, x)
    ymax = _truncation_point(lam, TAIL_MASS)
    mean, sq = kernels.poisson_mixture_pmf(lam, ymax)
    se = np.sqrt(np.maximum(sq - mean * mean, 0.0) / n_mc)
    tail = float(stats.poisson.sf(ymax, lam).mean())
    return PredictiveDistribution(mean, provenance, se, tail)


def _unify(p, q):
    p = np.asarray(p.pmf if isinstance(p, PredictiveDistribution) else p, dtype=np.float64)
    q = np.asarray(q.pmf if isinstance(q, PredictiveDistribution) else q, dtype=np.float64)
    n = max(p.size, q.size)
    return np.pad(p, (0, n - p.size)), np.pad(q, (0, n - q.size))


def _smooth(p, q):
    # only smooth when q misses support that p has, so KL(p, p) stays exactly zero
    if np.any((q <= 0) & (p > 0)):
        q = q + SMOOTHING
        q = q / q.sum()
    return q


def kl_divergence(p, q) -> float:
    """``sum_y p(y) [log p(y) - log q(y)]`` over the union of both supports.

    Both inputs are normalized first. Where ``q`` has no mass but ``p`` does,
    ``q`` is smoothed by adding 1e-12 everywhere and renormalizing. Returns
    ``inf`` if the divergence is still unbounded.
    """
    p, q = _unify(p, q)
    if p.sum() <= 0 or q.sum() <= 0:
        raise ContractError("distributions must have positive mass")
    p = p / p.sum()
    q = _smooth(p, q / q.sum())
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return max(float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask])))), 0.0)


def mean_failure_curve(source, x: np.ndarray, n_theta: int = 4000, rng_seed: int = 0) -> np.ndarray:
    """Component failure probability averaged over a parameter source, at each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if isinstance(source, FragilityParams):
        return _probabilities(source.alpha[None, :], source.beta[None, :], x)
    rng = np.random.default_rng(rng_seed)
    alpha, beta = draw_theta(source, n_theta, rng)
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], 256):
        xs = x[start:start + 256]
        eta = np.einsum("dp,tdp->td", beta, xs[:, None, :] - alpha[None, :, :])
        out[start:start + 256] = expit(np.clip(eta, -EXP_CLAMP, EXP_CLAMP)).mean(axis=1)
    return out


def signed_pointwise_divergence(
    p,
    q,
    stress_source=None,
    n_mc: int = 10_000,
    rng_seed: int = 0,
    n_theta: int = 4000,
) -> float:
    """KL-style sum without normalization, so the result may be negative.

    With two :class:`PredictiveDistribution` arguments this is
    ``sum_y p(y) [log p(y) - log q(y)]`` on the raw masses. With two parameter
    sources it compares fragility curves:
    ``E_x[g_p(x) (log g_p(x) - log g_q(x))]`` with ``x`` drawn from
    ``stress_source``. Curves are not densities in ``x``, so a fitted curve
    that over-predicts everywhere gives a negative value.
    """
    if isinstance(p, PredictiveDistribution) or isinstance(q, PredictiveDistribution):
        pp, qq = _unify(p, q)
        qq = _smooth(pp, qq)
        mask = pp > 0
        if np.any(qq[mask] <= 0):
            return math.inf
        return float(np.sum(pp[mask] * (np.log(pp[mask]) - np.log(qq[mask]))))
    if stress_source is None:
        raise ContractError("fragility-curve divergence needs a stress source")
    features = theta_features(p)
    if theta_features(q) != features:
        raise ContractError("parameter sources have different features")
    rng = np.random.default_rng(rng_seed)
    x = draw_stress(stress_source, features, n_mc, rng)
    x, counts = np.unique(x, axis=0, return_counts=True)
    seed_theta = int(rng.integers(2**31))
    gp = mean_failure_curve(p, x, n_theta, seed_theta)
    gq = mean_failure_curve(q, x, n_theta, seed_theta + 1)
    return float(np.sum(counts * gp * (np.log(gp) - np.log(gq))) / counts.sum())


DIVERGENCE_COLUMNS = ("scenario", "cov", "alpha_mean", "metric", "level", "value")


def write_divergence_rows(rows: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIVERGENCE_COLUMNS)
        for r in rows:
            w.writerow([r["scenario"], repr(float(r["cov"])), repr(float(r["alpha_mean"])), r["metric"], r["level"], repr(float(r["value"]))])
