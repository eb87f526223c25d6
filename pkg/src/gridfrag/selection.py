"""BIC scoring of candidate feature subsets, with a Monte Carlo marginal likelihood."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError, UnderflowError
from .fragility import FragilityParams
from .inference import (
    EmpiricalPrior,
    LogLikelihoodContext,
    MLEResult,
    PosteriorChain,
    fit_mle,
    working_loglik,
)
from .population import FailureRecord
from .stress import StressSeries

TIE_TOL = 1e-9


@dataclass
class CandidateModel:
    """A model structure (feature subset) and its fit.

    ``n_obs`` counts timesteps. ``log_lik`` is the maximized log-likelihood;
    ``None`` means the candidate is unfitted.
    """

    model_id: str
    features: tuple[str, ...]
    n_obs: float
    log_lik: float | None = None
    mle: FragilityParams | None = None
    chain: PosteriorChain | None = None
    context: LogLikelihoodContext | None = None
    log_marginal: float | None = None

    @property
    def k(self) -> int:
        return 2 * len(self.features)


def fit_candidate(
    stress: StressSeries,
    record: FailureRecord,
    n_components: int,
    features: Sequence[str],
    model_id: str | None = None,
) -> CandidateModel:
    ctx = LogLikelihoodContext(stress, record, n_components, features)
    res: MLEResult = fit_mle(ctx)
    return CandidateModel(
        model_id or "+".join(features),
        tuple(features),
        n_obs=ctx.n_obs,
        log_lik=res.log_lik,
        mle=res.params,
        context=ctx,
    )


def bic_score(model: CandidateModel) -> float:
    """``-2 log L + K log n`` at the maximum-likelihood estimate."""
    if model.log_lik is None:
        raise ContractError(f"candidate {model.model_id!r} has not been fitted")
    if model.n_obs <= 0:
        raise ContractError("n_obs must be positive")
    return -2.0 * model.log_lik + model.k * math.log(model.n_obs)


@dataclass(frozen=True)
class DiscretePrior:
    """Finite prior over working-parameter vectors, for enumeration checks."""

    features: tuple[str, ...]
    points: np.ndarray
    weights: np.ndarray | None = None

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Systematic sampling: each point appears ``n * weight`` times up to one draw."""
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.full(pts.shape[0], 1.0 / pts.shape[0]) if self.weights is None else np.asarray(self.weights, float)
        cum = np.cumsum(w / w.sum())
        cum[-1] = 1.0
        pos = (np.arange(n) + rng.random()) / n
        return pts[np.searchsorted(cum, pos, side="right")]


@dataclass(frozen=True)
class MarginalLikelihood:
    log_value: float
    std_error: float
    n_draws: int


def marginal_likelihood_mc(
    model: CandidateModel,
    prior: EmpiricalPrior | DiscretePrior,
    n_draws: int = 2000,
    rng_seed: int = 0,
    context: LogLikelihoodContext | None = None,
) -> MarginalLikelihood:
    """Log of the prior-averaged likelihood, ``log E_prior[L(theta)]``.

    The average uses log-sum-exp; ``std_error`` is the delta-method standard
    error of the estimate on the log scale.
    """
    if n_draws < 1000:
        raise ContractError(f"n_draws must be >= 1000, got {n_draws}")
    ctx = context or model.context
    if ctx is None:
        raise ContractError("a likelihood context is required")
    rng = np.random.default_rng(rng_seed)
    draws = prior.sample(n_draws, rng)
    ll = np.array([working_loglik(ctx, w) for w in draws])
    finite = np.isfinite(ll)
    if not finite.any():
        raise UnderflowError("every prior draw has zero likelihood")
    ll = np.where(finite, ll, -np.inf)
    log_mean = float(logsumexp(ll) - math.log(n_draws))
    w = np.exp(ll - ll.max())
    se = float(w.std(ddof=1) / (math.sqrt(n_draws) * w.mean()))
    return MarginalLikelihood(log_mean, se, n_draws)


@dataclass
class SelectionResult:
    winner: CandidateModel
    table: list[dict]
    tie: bool = False


def select_model(candidates: Sequence[CandidateModel]) -> SelectionResult:
    """Pick the BIC minimizer; ties go to the candidate with fewer parameters."""
    if not candidates:
        raise ContractError("at least one candidate is required")
    scored = [(bic_score(c), c.k, i, c) for i, c in enumerate(candidates)]
    best_bic = min(s[0] for s in scored)
    tied = [s for s in scored if s[0] - best_bic <= TIE_TOL]
    tied.sort(key=lambda s: (s[1], s[3].model_id))
    winner = tied[0][3]
    table = []
    for bic, _, _, c in scored:
        table.append(
            {
                "model_id": c.model_id,
                "features": "+".join(c.features),
                "K": c.k,
                "n": c.n_obs,
                "log_lik": c.log_lik,
                "bic": bic,
                "delta_bic": bic - best_bic,
                "log_marginal": c.log_marginal,
            }
        )
    return SelectionResult(winner, table, tie=len(tied) > 1)


SCORE_COLUMNS = ("model_id", "features", "K", "n", "log_lik", "bic", "delta_bic", "log_marginal")


def write_score_table(table: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for row in table:
            w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in SCORE_COLUMNS])
