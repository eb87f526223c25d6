"""Minimal upgrade plans meeting an annual failure-risk target."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import ContractError
from .fragility import FragilityParams
from .inference import PosteriorChain
from .population import PopulationSpec
from .stress import draw_stress

# distinct thresholds up to this count are evaluated exactly, beyond it via a spline in log-rate
EXACT_LIMIT = 256
GRID_POINTS = 256


class NormalThresholds:
    """Normal threshold distribution truncated below at zero."""

    def __init__(self, mean: float, sd: float):
        if sd < 0:
            raise ContractError("sd must be non-negative")
        self.mean, self.sd = float(mean), float(sd)
        if self.sd > 0:
            self._dist = stats.truncnorm(-self.mean / self.sd, np.inf, loc=self.mean, scale=self.sd)

    def cdf(self, tau):
        if self.sd == 0:
            return np.where(np.asarray(tau) > self.mean, 1.0, 0.0)
        return self._dist.cdf(tau)

    def quantiles(self, n: int) -> np.ndarray:
        if self.sd == 0:
            return np.full(n, self.mean)
        return self._dist.ppf((np.arange(n) + 0.5) / n)

    def upper_bracket(self) -> float:
        if self.sd == 0:
            return self.mean + 1.0
        return float(self._dist.ppf(0.999))

    def __repr__(self):
        return f"NormalThresholds(mean={self.mean}, sd={self.sd})"


class EmpiricalThresholds:
    """Discrete threshold distribution with equal weight on each value.

    ``cdf(tau)`` is the fraction of values strictly below ``tau``, matching the
    rule that components with ``alpha < tau`` are upgraded.
    """

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
        if v.size == 0:
            raise ContractError("need at least one threshold value")
        self.values = v

    def cdf(self, tau):
        return np.searchsorted(self.values, tau, side="left") / self.values.size

    def quantiles(self, n: int) -> np.ndarray:
        idx = np.floor((np.arange(n) + 0.5) / n * self.values.size).astype(int)
        return self.values[np.minimum(idx, self.values.size - 1)]

    def upper_bracket(self) -> float:
        return float(self.values[-1]) + 1.0

    def __repr__(self):
        return f"EmpiricalThresholds(n={self.values.size})"


def threshold_distribution(source, feature: str | None = None):
    """Threshold distribution implied by a population spec, posterior chain or point estimate."""
    feats = tuple(source.features)
    i = feats.index(feature) if feature is not None else 0
    if isinstance(source, PopulationSpec):
        return NormalThresholds(source.alpha_mean[i], source.alpha_sd(i))
    if isinstance(source, PosteriorChain):
        return EmpiricalThresholds(source.post_burn_in()[0][:, i])
    if isinstance(source, FragilityParams):
        return EmpiricalThresholds([source.alpha[i]])
    raise ContractError(f"unsupported threshold source {type(source).__name__}")


@dataclass(frozen=True)
class RiskTarget:
    """Require ``P(Y > delta) <= epsilon`` for the failure count over ``horizon`` hours."""

    delta: int
    epsilon: float
    horizon: int = 8760

    def __post_init__(self):
        if self.delta < 0:
            raise ContractError(f"delta must be >= 0, got {self.delta}")
        if not (0.0 < self.epsilon <= 1.0):
            raise ContractError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1 hour")

    @classmethod
    def from_fraction(cls, fraction: float, n_components: int, epsilon: float, horizon: int = 8760) -> "RiskTarget":
        return cls(int(math.floor(fraction * n_components + 1e-9)), epsilon, horizon)


@dataclass(frozen=True)
class UpgradePlan:
    tau: float
    m: int
    achieved_prob: float
    feasible: bool
    n_components: int

    @property
    def m_over_n(self) -> float:
        return self.m / self.n_components


def draw_annual_stress(stress_source, feature: str, n_mc: int, horizon: int, rng_seed: int) -> np.ndarray:
    """``(n_mc, horizon)`` matrix of i.i.d. hourly stresses, one row per simulated year."""
    rng = np.random.default_rng(rng_seed)
    return draw_stress(stress_source, [feature], n_mc * horizon, rng).reshape(n_mc, horizon)


def _annual_rates(thresholds: np.ndarray, beta: float, years: np.ndarray) -> np.ndarray:
    """Expected annual failures of one component at each threshold, per simulated year."""
    uniq, inverse = np.unique(thresholds, return_inverse=True)
    exact = uniq.size <= EXACT_LIMIT
    nodes = uniq if exact else np.linspace(uniq[0], uniq[-1], GRID_POINTS)
    out = np.empty((years.shape[0], thresholds.size))
    for r, year in enumerate(years):
        node_rates = kernels.logistic_sum(-beta * nodes, -beta * year)
        if exact:
            out[r] = node_rates[inverse.reshape(-1)]
        else:
            spline = CubicSpline(nodes, np.log(node_rates))
            out[r] = np.exp(spline(thresholds))
    return out


class AnnualRiskModel:
    """Common-random-number evaluator of annual exceedance probability versus ``tau``.

    Stress years are drawn once. Component thresholds are the ``N``
    mid-quantiles of the threshold distribution, so the population is a
    stratified draw. Upgraded components (``alpha < tau``) contribute no failures.
    """

    def __init__(self, thresholds, beta: float, stress_source, n_components: int, target: RiskTarget,
                 n_mc: int = 200, rng_seed: int = 0, feature: str = "wind_speed"):
        if n_mc < 100:
            raise ContractError(f"n_mc must be >= 100, got {n_mc}")
        if n_components < 1:
            raise ContractError("n_components must be >= 1")
        if beta <= 0:
            raise ContractError("beta must be positive")
        self.dist = thresholds
        self.beta = float(beta)
        self.n_components = int(n_components)
        self.target = target
        self.alphas = np.sort(thresholds.quantiles(self.n_components))
        years = draw_annual_stress(stress_source, feature, n_mc, target.horizon, rng_seed)
        rates = _annual_rates(self.alphas, self.beta, years)
        suffix = np.zeros((n_mc, self.n_components + 1))
        suffix[:, :-1] = np.cumsum(rates[:, ::-1], axis=1)[:, ::-1]
        self._suffix = suffix

    def annual_rate(self, tau: float) -> np.ndarray:
        k = np.searchsorted(self.alphas, tau, side="left")
        return self._suffix[:, k]

    def exceedance(self, tau: float = 0.0, delta: int | None = None) -> float:
        delta = self.target.delta if delta is None else delta
        lam = self.annual_rate(tau)
        return float(stats.poisson.sf(delta, lam).mean())


def exceedance_probability(
    thresholds,
    beta: float,
    stress_source,
    n_components: int,
    target: RiskTarget,
    n_mc: int = 200,
    rng_seed: int = 0,
    tau: float = 0.0,
    feature: str = "wind_speed",
) -> float:
    """Monte Carlo ``P(Y > delta)`` for annual failures after upgrading every component below ``tau``."""
    model = AnnualRiskModel(thresholds, beta, stress_source, n_components, target, n_mc, rng_seed, feature)
    return model.exceedance(tau)


def upgrade_count(thresholds, tau: float, n_components: int) -> int:
    """``ceil(N * F(tau))``: components whose threshold lies below ``tau``."""
    if tau < 0:
        raise ContractError(f"tau must be >= 0, got {tau}")
    frac = float(thresholds.cdf(tau))
    return int(min(n_components, max(0, math.ceil(n_components * frac - 1e-9))))


def solve_upgrade_threshold(
    thresholds,
    beta: float,
    stress_source,
    n_components: int,
    target: RiskTarget,
    solver_tol: float = 0.01,
    n_mc: int = 200,
    rng_seed: int = 0,
    feature: str = "wind_speed",
) -> UpgradePlan:
    """Smallest truncation threshold meeting ``target``, found by bisection.

    The bracket is ``[0, upper]`` with ``upper`` the 99.9th percentile of a
    continuous distribution, or just above the largest value of a discrete one.
    All evaluations share one set of random numbers, so the exceedance curve is
    monotone in ``tau``.
    """
    if target.delta > n_components:
        raise ContractError(f"delta {target.delta} exceeds n_components {n_components}")
    model = AnnualRiskModel(thresholds, beta, stress_source, n_components, target, n_mc, rng_seed, feature)
    eps = target.epsilon
    p0 = model.exceedance(0.0)
    if p0 <= eps:
        return UpgradePlan(0.0, 0, p0, True, n_components)
    hi = thresholds.upper_bracket()
    p_hi = model.exceedance(hi)
    if p_hi > eps:
        return UpgradePlan(hi, n_components, p_hi, False, n_components)
    lo = 0.0
    while hi - lo > solver_tol:
        mid = 0.5 * (lo + hi)
        if model.exceedance(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return UpgradePlan(hi, upgrade_count(thresholds, hi, n_components), model.exceedance(hi), True, n_components)


def compare_policies(
    true_spec: PopulationSpec,
    bhm_chain: PosteriorChain,
    mle_params: FragilityParams,
    stress_source,
    target: RiskTarget,
    solver_tol: float = 0.01,
    n_mc: int = 200,
    rng_seed: int = 0,
    feature: str = "wind_speed",
) -> list[dict]:
    """Solve the plan under the true, posterior-mixture and point-estimate threshold distributions.

    Slopes are held at the source's value: the true slope, the posterior-mean
    slope, and the MLE slope respectively. All three share random numbers.
    """
    i_true = true_spec.features.index(feature)
    sources = [
        ("true", threshold_distribution(true_spec, feature), true_spec.beta[i_true]),
        ("bhm", threshold_distribution(bhm_chain, feature),
         float(bhm_chain.post_burn_in()[1][:, bhm_chain.features.index(feature)].mean())),
        ("mle", threshold_distribution(mle_params, feature), float(mle_params.beta[mle_params.features.index(feature)])),
    ]
    n = true_spec.n_components
    rows = []
    for name, dist, beta in sources:
        plan = solve_upgrade_threshold(dist, beta, stress_source, n, target, solver_tol, n_mc, rng_seed, feature)
        rows.append({
            "source": name,
            "tau": plan.tau,
            "M": plan.m,
            "M_over_N": plan.m_over_n,
            "achieved_prob": plan.achieved_prob,
            "feasible": plan.feasible,
            "beta": beta,
        })
    return rows


PLAN_COLUMNS = ("source", "tau", "M", "M_over_N", "achieved_prob", "feasible")


def write_plan_table(rows: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in PLAN_COLUMNS])
