"""Heterogeneous component populations and synthetic failure counts."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels
from .errors import ContractError, ParseError, ValidationError
from .fragility import FragilityParams
from .stress import StressSeries


@dataclass(frozen=True)
class PopulationSpec:
    """Population of ``n_components`` with normally distributed thresholds.

    Each feature has a threshold mean, a coefficient of variation (``cov``),
    and a slope shared by every component.
    """

    n_components: int
    features: tuple[str, ...]
    alpha_mean: tuple[float, ...]
    cov: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        for name in ("features", "alpha_mean", "cov", "beta"):
            val = getattr(self, name)
            if isinstance(val, (str, int, float)):
                val = (val,)
            object.__setattr__(self, name, tuple(val))
        p = len(self.features)
        if not p or not (len(self.alpha_mean) == len(self.cov) == len(self.beta) == p):
            raise ContractError("features, alpha_mean, cov and beta must have equal nonzero length")
        if int(self.n_components) < 1:
            raise ContractError(f"n_components must be >= 1, got {self.n_components}")
        if any(m <= 0 for m in self.alpha_mean):
            raise ContractError("alpha means must be positive")
        if any(c < 0 for c in self.cov):
            raise ContractError("cov must be non-negative")
        if any(b <= 0 for b in self.beta):
            raise ContractError("slopes must be positive")
        object.__setattr__(self, "n_components", int(self.n_components))

    def alpha_sd(self, i: int = 0) -> float:
        return self.cov[i] * self.alpha_mean[i]

    def mean_params(self) -> FragilityParams:
        return FragilityParams(self.features, self.alpha_mean, self.beta)

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "alpha": list(self.alpha_mean),
            "beta": list(self.beta),
            "cov": list(self.cov),
            "n_components": self.n_components,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        return cls(int(d["n_components"]), tuple(d["features"]), tuple(d["alpha"]), tuple(d["cov"]), tuple(d["beta"]))


@dataclass(frozen=True, eq=False)
class ComponentPopulation:
    """Concrete thresholds for every component; ``alpha`` has shape ``(N, p)``."""

    features: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray

    def __len__(self):
        return self.alpha.shape[0]

    def __getitem__(self, j) -> FragilityParams:
        return FragilityParams(self.features, self.alpha[j], self.beta)

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    def offsets(self) -> np.ndarray:
        """Per-component ``sum_i beta_i alpha_ij``; the linear predictor is ``beta.x - offset``."""
        return self.alpha @ self.beta


def _truncated_normal(mean, sd, size, rng):
    """Normal draws with non-positive values redrawn."""
    out = mean + sd * rng.standard_normal(size)
    bad = out <= 0
    while bad.any():
        out[bad] = mean + sd * rng.standard_normal(int(bad.sum()))
        bad = out <= 0
    return out


def draw_population(spec: PopulationSpec, rng_seed: int) -> ComponentPopulation:
    """Draw component thresholds ``alpha_j ~ Normal(mean, (cov * mean)^2)``, truncated at zero."""
    rng = np.random.default_rng(rng_seed)
    cols = []
    for i in range(len(spec.features)):
        if spec.cov[i] == 0:
            cols.append(np.full(spec.n_components, float(spec.alpha_mean[i])))
        else:
            cols.append(_truncated_normal(spec.alpha_mean[i], spec.alpha_sd(i), spec.n_components, rng))
    alpha = np.column_stack(cols)
    beta = np.asarray(spec.beta, dtype=np.float64)
    alpha.setflags(write=False)
    beta.setflags(write=False)
    return ComponentPopulation(spec.features, alpha, beta)


@dataclass(frozen=True, eq=False)
class FailureRecord:
    """Observed system failure counts aligned with a stress series."""

    timestamps: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        y = np.asarray(self.counts)
        if y.size and (not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y != np.round(y))):
            raise ValidationError("failure counts must be non-negative integers")
        y = y.astype(np.int64).reshape(-1)
        if ts.size != y.size:
            raise ValidationError(f"{ts.size} timestamps but {y.size} counts")
        ts.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "counts", y)

    def __len__(self):
        return self.counts.size

    def equals(self, other: "FailureRecord") -> bool:
        return np.array_equal(self.timestamps, other.timestamps) and np.array_equal(self.counts, other.counts)


def write_failure_csv(record: FailureRecord, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "y"])
        w.writerows(zip(record.timestamps.tolist(), record.counts.tolist()))


def load_failure_csv(path) -> FailureRecord:
    ts, ys = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "y"]:
            raise ParseError("header must be 'timestamp,y'", 1)
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                ts.append(int(rec[0]))
                ys.append(int(rec[1]))
            except (ValueError, IndexError):
                raise ParseError(f"bad row {rec}", line) from None
    return FailureRecord(np.array(ts, dtype=np.int64), np.array(ys, dtype=np.int64))


def _population_parts(pop, stress: StressSeries):
    if isinstance(pop, FragilityParams):
        features, offsets, beta = pop.features, np.array([pop.alpha @ pop.beta]), pop.beta
    else:
        features, offsets, beta = pop.features, pop.offsets(), pop.beta
    missing = [f for f in features if f not in stress.features]
    if missing:
        raise ContractError(f"stress series lacks population features {missing}")
    return stress.select(features) @ beta, offsets


def population_rate(pop: ComponentPopulation, stress: StressSeries) -> np.ndarray:
    """Hourly Poisson rate ``lambda_t = sum_j g_j(x_t)``.

    Identical stress rows share one evaluation, which makes quantized series
    cheap regardless of population size.
    """
    u, offsets = _population_parts(pop, stress)
    uniq, inverse = np.unique(u, return_inverse=True)
    return kernels.logistic_sum(uniq, offsets)[inverse.reshape(-1)]


def poisson_counts(rate: np.ndarray, rng_seed: int) -> np.ndarray:
    """Poisson draws by inversion of a counter-based uniform stream.

    Draw ``t`` depends only on ``(rng_seed, t, rate[t])``, so the result is
    independent of evaluation order and monotone in the rate.
    """
    gen = np.random.Generator(np.random.Philox(key=int(rng_seed)))
    u = gen.random(rate.size)
    y = stats.poisson.ppf(u, rate)
    return np.maximum(np.nan_to_num(y, nan=0.0), 0).astype(np.int64)


def simulate_failures(pop: ComponentPopulation, stress: StressSeries, rng_seed: int) -> FailureRecord:
    """Draw ``y_t ~ Poisson(sum_j g_j(x_t))`` for every hour of ``stress``.

    Components are not depleted by failure; ``y_t`` may therefore exceed
    ``N`` when ``N`` is tiny.
    """
    rate = population_rate(pop, stress)
    return FailureRecord(stress.timestamps, poisson_counts(rate, rng_seed))
