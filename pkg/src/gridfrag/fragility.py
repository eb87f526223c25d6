"""Logistic fragility curve and its parameter container."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError

EXP_CLAMP = 700.0


@dataclass(frozen=True, eq=False)
class FragilityParams:
    """Per-feature thresholds ``alpha`` and slopes ``beta`` of the curve.

    ``alpha`` is in the feature's native unit (m/s for wind), ``beta`` in the
    inverse unit. Slopes must be strictly positive.
    """

    features: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        feats = tuple(self.features)
        a = np.array(self.alpha, dtype=np.float64).reshape(-1)
        b = np.array(self.beta, dtype=np.float64).reshape(-1)
        if not (len(feats) == a.size == b.size) or not feats:
            raise ContractError(f"features {feats}, alpha {a}, beta {b} must have equal nonzero length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ContractError("fragility parameters must be finite")
        if np.any(b <= 0):
            raise ContractError(f"slopes must be positive, got {b}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def dim(self) -> int:
        return len(self.features)

    def working(self) -> np.ndarray:
        """Unconstrained vector ``[alpha..., log beta...]`` used by the fitters."""
        return np.concatenate([self.alpha, np.log(self.beta)])

    @classmethod
    def from_working(cls, features: Sequence[str], w) -> "FragilityParams":
        w = np.asarray(w, dtype=np.float64)
        p = len(features)
        return cls(tuple(features), w[:p], np.exp(w[p:]))

    def to_dict(self) -> dict:
        return {"features": list(self.features), "alpha": self.alpha.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FragilityParams":
        return cls(tuple(d["features"]), d["alpha"], d["beta"])

    def __eq__(self, other):
        if not isinstance(other, FragilityParams):
            return NotImplemented
        return (
            self.features == other.features
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
        )

    def __repr__(self):
        return f"FragilityParams(features={self.features}, alpha={self.alpha.tolist()}, beta={self.beta.tolist()})"


def _as_rows(params: FragilityParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0 or (x.ndim == 1 and x.size == params.dim)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if x.size == params.dim else x.reshape(-1, 1)
    if x.shape[1] != params.dim:
        raise ContractError(f"stress has {x.shape[1]} features, parameters have {params.dim}")
    if not np.all(np.isfinite(x)):
        raise ContractError("stress must be finite")
    return x, scalar


def linear_predictor(params: FragilityParams, x) -> np.ndarray:
    x, _ = _as_rows(params, x)
    return (x - params.alpha) @ params.beta


def failure_probability(params: FragilityParams, x):
    """Per-component failure probability ``1 / (1 + exp(-sum_i beta_i (x_i - alpha_i)))``.

    ``x`` is one stress vector or an ``(n, p)`` matrix of them; a 1-D array is
    treated as ``n`` rows when the curve has a single feature.
    """
    rows, scalar = _as_rows(params, x)
    eta = np.clip((rows - params.alpha) @ params.beta, -EXP_CLAMP, EXP_CLAMP)
    g = expit(eta)
    return float(g[0]) if scalar else g


def system_failure_rate(params: FragilityParams, x, n_components: int):
    """Poisson rate of system-wide failures, ``n_components * g(x)``."""
    if n_components < 1:
        raise ContractError(f"n_components must be >= 1, got {n_components}")
    return n_components * failure_probability(params, x)
