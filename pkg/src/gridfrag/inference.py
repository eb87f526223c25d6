"""Parameter estimation: Poisson likelihood, MLE, bootstrap prior, Metropolis-Hastings."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

from . import kernels
from .errors import (
    ContractError,
    NoInformationError,
    PriorConstructionError,
    SamplerDegenerateWarning,
    ValidationError,
)
from .fragility import EXP_CLAMP, FragilityParams
from .population import FailureRecord
from .stress import StressSeries

RATE_FLOOR = 1e-300


class LogLikelihoodContext:
    """Stress/failure data prepared for repeated likelihood evaluation.

    Hours with identical stress vectors are grouped: the Poisson log-likelihood
    only depends on the per-group failure total and hour count, plus a
    constant ``-sum_t log(y_t!)``.

    Parameters
    ----------
    stress : StressSeries
    record : FailureRecord
        Must share ``stress``'s timestamps.
    n_components : int
    features : sequence of str, optional
        Stress columns entering the model; all columns by default.
    """

    def __init__(self, stress: StressSeries, record: FailureRecord, n_components: int, features=None):
        if n_components < 1:
            raise ContractError("n_components must be >= 1")
        if len(stress) != len(record) or not np.array_equal(stress.timestamps, record.timestamps):
            raise ValidationError("stress series and failure record are not aligned")
        self.features = tuple(features) if features is not None else stress.features
        self.n_components = int(n_components)
        self.x = stress.select(self.features)
        self.y = record.counts.astype(np.float64)
        if len(self.y):
            self.x_unique, self.row_group = np.unique(self.x, axis=0, return_inverse=True)
            self.row_group = self.row_group.reshape(-1)
        else:
            self.x_unique = np.empty((0, len(self.features)))
            self.row_group = np.empty(0, dtype=np.int64)
        self._set_weights(np.arange(len(self.y)))

    @classmethod
    def empty(cls, features: Sequence[str], n_components: int) -> "LogLikelihoodContext":
        """A context without observations; its log-likelihood is identically zero."""
        s = StressSeries(np.empty(0, dtype=np.int64), tuple(features), np.empty((0, len(features))))
        return cls(s, FailureRecord(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)), n_components)

    def _set_weights(self, rows: np.ndarray) -> None:
        g = self.row_group[rows]
        k = self.x_unique.shape[0]
        self.hours = np.bincount(g, minlength=k).astype(np.float64)
        self.counts = np.bincount(g, weights=self.y[rows], minlength=k)
        self.log_factorial = float(gammaln(self.y[rows] + 1.0).sum())
        self.n_obs = int(rows.size)
        self.total_failures = float(self.y[rows].sum())
        keep = self.hours > 0
        self._xu = np.ascontiguousarray(self.x_unique[keep])
        self._cu = np.ascontiguousarray(self.counts[keep])
        self._hu = np.ascontiguousarray(self.hours[keep])
        self._rows = rows

    def resample(self, rows) -> "LogLikelihoodContext":
        """A context over the multiset of hour indices ``rows``."""
        new = object.__new__(LogLikelihoodContext)
        new.features = self.features
        new.n_components = self.n_components
        new.x, new.y = self.x, self.y
        new.x_unique, new.row_group = self.x_unique, self.row_group
        new._set_weights(np.asarray(rows, dtype=np.int64))
        return new

    @property
    def failure_rows(self) -> np.ndarray:
        rows = self._rows
        return self.x[rows[self.y[rows] > 0]]

    def grouped(self):
        """``(x, failures, hours)`` for each distinct stress vector present."""
        return self._xu, self._cu, self._hu


def _loglik_vec(ctx: LogLikelihoodContext, alpha, beta) -> float:
    if ctx.n_obs == 0:
        return 0.0
    x, c, h = ctx.grouped()
    return kernels.poisson_loglik(x, c, h, alpha, beta, ctx.n_components) - ctx.log_factorial


def log_likelihood(ctx: LogLikelihoodContext, params: FragilityParams) -> float:
    """Poisson log-likelihood ``sum_t [y_t log(lambda_t) - lambda_t - log(y_t!)]``, ``lambda_t = N g(x_t)``.

    Rates are floored at 1e-300 so the value is finite for every valid input.
    """
    if params.features != ctx.features:
        raise ContractError(f"parameters for {params.features}, data for {ctx.features}")
    return _loglik_vec(ctx, params.alpha, params.beta)


def working_loglik(ctx: LogLikelihoodContext, w: np.ndarray) -> float:
    """Log-likelihood at working parameters; ``-inf`` where they do not map to a valid curve."""
    p = len(ctx.features)
    with np.errstate(over="ignore"):
        beta = np.exp(w[p:])
    if not (np.all(np.isfinite(w[:p])) and np.all(np.isfinite(beta)) and np.all(beta > 0)):
        return -math.inf
    return _loglik_vec(ctx, w[:p], beta)


def _derivatives(ctx: LogLikelihoodContext, w: np.ndarray):
    """Log-likelihood, gradient and Hessian in ``(alpha, log beta)`` coordinates."""
    p = len(ctx.features)
    alpha, beta = w[:p], np.exp(w[p:])
    x, c, h = ctx.grouped()
    d = x - alpha
    eta = np.clip(d @ beta, -EXP_CLAMP, EXP_CLAMP)
    g = expit(eta)
    lam = np.maximum(ctx.n_components * g, RATE_FLOOR)
    ll = float(c @ np.log(lam) - h @ lam) - ctx.log_factorial
    q = 1.0 - g
    s = q * (c - h * lam)
    curv = -q * (g * c + h * lam * (1.0 - 2.0 * g))
    jac = np.hstack([np.broadcast_to(-beta, d.shape), d * beta])
    grad = jac.T @ s
    hess = (jac * curv[:, None]).T @ jac
    # second derivatives of eta itself
    sb = s @ (d * beta)
    ss = s.sum()
    for i in range(p):
        hess[i, p + i] += -beta[i] * ss
        hess[p + i, i] += -beta[i] * ss
        hess[p + i, p + i] += sb[i]
    return ll, grad, hess


@dataclass(frozen=True)
class MLEResult:
    params: FragilityParams
    log_lik: float
    n_iter: int
    converged: bool
    message: str = ""


def default_init(ctx: LogLikelihoodContext) -> FragilityParams:
    """Threshold at the 95th percentile of stress during failure hours, slope 0.1."""
    rows = ctx.failure_rows
    if rows.shape[0] == 0:
        raise NoInformationError("no failures recorded; the likelihood carries no information")
    alpha0 = np.percentile(rows, 95, axis=0)
    return FragilityParams(ctx.features, alpha0, np.full(len(ctx.features), 0.1))


def fit_mle(
    ctx: LogLikelihoodContext,
    init: FragilityParams | None = None,
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> MLEResult:
    """Maximize the Poisson log-likelihood by Levenberg-damped Newton steps in ``(alpha, log beta)``.

    Each step is capped at 1 in log-slope and ``max(10, |alpha|/4)`` in
    threshold. Stops when an accepted step gains less than ``tol`` in log-likelihood, when
    no step can improve it, or after ``max_iter`` iterations. Non-convergence is
    reported through ``converged=False`` with the best point found.

    Raises
    ------
    NoInformationError
        If the record contains no failures.
    """
    if ctx.total_failures <= 0:
        raise NoInformationError("no failures recorded; the likelihood carries no information")
    if init is None:
        init = default_init(ctx)
    w = init.working().astype(np.float64)
    _, grad, hess = _derivatives(ctx, w)
    # gains are measured with one evaluator so rounding differences cannot masquerade as progress
    ll = working_loglik(ctx, w)
    damping = 1e-3
    n = w.size
    for it in range(1, max_iter + 1):
        neg_h = -hess
        scale = np.maximum(np.abs(np.diag(neg_h)), 1e-12)
        improved = False
        while damping < 1e16:
            try:
                step = np.linalg.solve(neg_h + damping * np.diag(scale), grad)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            # trust region: bounded moves in log-slope and in threshold
            p = len(ctx.features)
            limit = np.concatenate([np.maximum(10.0, 0.25 * np.abs(w[:p])), np.full(p, 1.0)])
            shrink = float(np.max(np.abs(step) / limit))
            if shrink > 1.0:
                step = step / shrink
            cand = w + step
            ll_new = working_loglik(ctx, cand) if np.all(np.isfinite(cand)) else -np.inf
            if np.isfinite(ll_new) and ll_new >= ll:
                improved = True
                break
            damping *= 4.0
        if not improved:
            return MLEResult(FragilityParams.from_working(ctx.features, w), ll, it, True, "no improving step")
        gain = ll_new - ll
        w, ll = cand, ll_new
        _, grad, hess = _derivatives(ctx, w)
        damping = max(damping / 3.0, 1e-12)
        if gain < tol:
            return MLEResult(FragilityParams.from_working(ctx.features, w), ll, it, True, "gain below tolerance")
    return MLEResult(FragilityParams.from_working(ctx.features, w), ll, max_iter, False, "iteration limit")


@dataclass(frozen=True, eq=False)
class EmpiricalPrior:
    """Multivariate normal over ``[alpha..., log beta...]``."""

    features: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray
    n_replicates: int = 0
    n_failed: int = 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mean.size != 2 * len(self.features) or cov.shape != (mean.size, mean.size):
            raise ContractError("prior mean/cov dimensions do not match the feature list")
        cov = 0.5 * (cov + cov.T)
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-10 * max(1.0, abs(vals).max()):
            raise ContractError(f"prior covariance is not positive semi-definite (min eigenvalue {vals.min():.3g})")
        if vals.min() < 0:
            cov = (vecs * np.clip(vals, 0, None)) @ vecs.T
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_degenerate(self) -> bool:
        vals = np.linalg.eigvalsh(self.cov)
        return bool(vals.min() <= 1e-14 * max(1.0, vals.max()))

    def fallback_std(self) -> np.ndarray:
        """Jump scale used when the covariance is singular: 1% of each parameter's magnitude."""
        return 0.01 * np.maximum(np.abs(self.mean), 1e-2)

    def effective_cov(self) -> np.ndarray:
        if self.is_degenerate():
            return self.cov + np.diag(self.fallback_std() ** 2)
        return self.cov

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        chol = np.linalg.cholesky(self.effective_cov())
        return self.mean + rng.standard_normal((n, self.dim)) @ chol.T

    def logpdf_factory(self):
        """Return a fast ``w -> log density`` closure using the effective covariance."""
        cov = self.effective_cov()
        chol = np.linalg.cholesky(cov)
        prec = np.linalg.inv(cov)
        const = -0.5 * self.dim * math.log(2 * math.pi) - float(np.log(np.diag(chol)).sum())
        mean = self.mean

        def logpdf(w):
            r = w - mean
            return const - 0.5 * float(r @ prec @ r)

        return logpdf

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "n_replicates": self.n_replicates,
            "n_failed": self.n_failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalPrior":
        return cls(tuple(d["features"]), d["mean"], d["cov"], d.get("n_replicates", 0), d.get("n_failed", 0))


def block_bootstrap_rows(n: int, block_hours: int, rng: np.random.Generator) -> np.ndarray:
    """Moving-block bootstrap indices of length ``n``."""
    block = max(1, min(int(block_hours), n))
    n_blocks = -(-n // block)
    starts = rng.integers(0, n - block + 1, n_blocks)
    return (starts[:, None] + np.arange(block)).reshape(-1)[:n]


def bootstrap_prior(
    ctx: LogLikelihoodContext,
    n_boot: int = 50,
    block_hours: int = 168,
    rng_seed: int = 0,
    init: FragilityParams | None = None,
) -> EmpiricalPrior:
    """Moment-matched normal prior from MLE fits to block-bootstrap replicates.

    Raises
    ------
    PriorConstructionError
        If more than half of the replicate fits fail.
    """
    if n_boot < 10:
        raise ContractError(f"n_boot must be >= 10, got {n_boot}")
    if init is None:
        init = fit_mle(ctx).params
    rng = np.random.default_rng(rng_seed)
    fits, failed = [], 0
    for _ in range(n_boot):
        rows = block_bootstrap_rows(ctx.n_obs, block_hours, rng)
        sub = ctx.resample(ctx._rows[rows])
        try:
            res = fit_mle(sub, init)
        except NoInformationError:
            failed += 1
            continue
        if not res.converged:
            failed += 1
            continue
        fits.append(res.params.working())
    if failed > n_boot / 2:
        raise PriorConstructionError(f"{failed} of {n_boot} bootstrap fits failed")
    reps = np.array(fits)
    cov = np.cov(reps, rowvar=False, ddof=1) if len(reps) > 1 else np.zeros((reps.shape[1],) * 2)
    return EmpiricalPrior(ctx.features, reps.mean(axis=0), np.atleast_2d(cov), len(reps), failed)


@dataclass(frozen=True, eq=False)
class PosteriorChain:
    """Metropolis-Hastings output; row ``k`` is the state after step ``k``."""

    features: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray
    accepted: np.ndarray
    scale: np.ndarray
    burn_in: int
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha.shape[0] - self.burn_in < 1:
            raise ContractError("chain has no post-burn-in samples")

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self)

    def post_burn_in(self) -> tuple[np.ndarray, np.ndarray]:
        return self.alpha[self.burn_in:], self.beta[self.burn_in:]

    def acceptance_rate(self, post_burn_in: bool = True) -> float:
        acc = self.accepted[self.burn_in:] if post_burn_in else self.accepted
        return float(acc.mean())

    def trailing_acceptance(self, window: int = 100) -> float:
        return float(self.accepted[-window:].mean())

    def sample_params(self, k: int) -> FragilityParams:
        return FragilityParams(self.features, self.alpha[k], self.beta[k])


def run_metropolis_hastings(
    ctx: LogLikelihoodContext,
    prior: EmpiricalPrior,
    n_steps: int = 50_000,
    burn_in: int = 10_000,
    target_accept: float = 0.25,
    rng_seed: int = 0,
    init: FragilityParams | None = None,
    window: int = 100,
) -> PosteriorChain:
    """Random-walk Metropolis-Hastings on ``log-likelihood + log prior``.

    Proposals are ``w* = w + z`` with ``z ~ N(0, s^2 * prior covariance)``.
    During burn-in the scalar ``s`` is multiplied by 1.1 (0.9) at the end of
    each ``window``-step block whose acceptance rate is above (below)
    ``target_accept +- 0.05``; afterwards it is frozen.
    """
    if not (0 <= burn_in < n_steps):
        raise ContractError(f"need 0 <= burn_in < n_steps, got burn_in={burn_in}, n_steps={n_steps}")
    if not (0.0 < target_accept < 1.0):
        raise ContractError(f"target_accept must lie in (0, 1), got {target_accept}")
    if prior.features != ctx.features:
        raise ContractError("prior and data have different features")
    if prior.is_degenerate():
        warnings.warn(
            "prior covariance is singular; using 1% of parameter magnitude as jump std",
            SamplerDegenerateWarning,
            stacklevel=2,
        )
    p = len(ctx.features)
    d = prior.dim
    chol = np.linalg.cholesky(prior.effective_cov())
    rng = np.random.default_rng(rng_seed)
    unit_jumps = rng.standard_normal((n_steps, d)) @ chol.T
    log_u = np.log(rng.random(n_steps))

    logprior = prior.logpdf_factory()
    data = ctx.n_obs > 0
    if data:
        x, c, h = ctx.grouped()
        loglik = kernels.poisson_loglik
        n_comp = ctx.n_components

    def logpost(w):
        lp = logprior(w)
        if data:
            lp += loglik(x, c, h, w[:p], np.exp(w[p:]), n_comp)
        return lp

    w = (init.working() if init is not None else prior.mean).astype(np.float64).copy()
    cur = logpost(w)
    s = 2.38 / math.sqrt(d)
    samples = np.empty((n_steps, d))
    accepted = np.zeros(n_steps, dtype=bool)
    scales = np.empty(n_steps)
    lo, hi = target_accept - 0.05, target_accept + 0.05
    for k in range(n_steps):
        prop = w + s * unit_jumps[k]
        new = logpost(prop)
        if log_u[k] < new - cur:
            w, cur = prop, new
            accepted[k] = True
        samples[k] = w
        scales[k] = s
        if k < burn_in and (k + 1) % window == 0:
            rate = accepted[k + 1 - window:k + 1].mean()
            if rate > hi:
                s *= 1.1
            elif rate < lo:
                s *= 0.9
    settings = {
        "n_steps": n_steps,
        "burn_in": burn_in,
        "target_accept": target_accept,
        "rng_seed": rng_seed,
        "window": window,
        "final_scale": s,
    }
    return PosteriorChain(ctx.features, samples[:, :p].copy(), np.exp(samples[:, p:]), accepted, scales, burn_in, settings)


PERCENTILES = (5, 25, 50, 75, 95)


def posterior_summary(chain: PosteriorChain, min_samples: int = 100) -> dict:
    """Mean, std and 5/25/50/75/95 percentiles of each parameter after burn-in."""
    alpha, beta = chain.post_burn_in()
    if alpha.shape[0] < min_samples:
        raise ContractError(f"post-burn-in chain has {alpha.shape[0]} samples, need >= {min_samples}")
    out = {}
    for i, f in enumerate(chain.features):
        for name, col in ((f"alpha_{f}", alpha[:, i]), (f"beta_{f}", beta[:, i])):
            pct = np.percentile(col, PERCENTILES)
            out[name] = {
                "mean": float(col.mean()),
                "std": float(col.std()),
                **{f"p{q}": float(v) for q, v in zip(PERCENTILES, pct)},
            }
    return out


def write_chain(chain: PosteriorChain, path, sidecar: dict | None = None) -> None:
    """CSV with ``step,accepted,scale,alpha_<f>,beta_<f>`` plus a ``.json`` settings sidecar."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = [f"{kind}_{f}" for f in chain.features for kind in ("alpha", "beta")]
        w.writerow(["step", "accepted", "scale", *cols])
        for k in range(len(chain)):
            vals = []
            for i in range(len(chain.features)):
                vals += [repr(float(chain.alpha[k, i])), repr(float(chain.beta[k, i]))]
            w.writerow([k, int(chain.accepted[k]), repr(float(chain.scale[k])), *vals])
    meta = {"features": list(chain.features), **chain.settings, "burn_in": chain.burn_in, **(sidecar or {})}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_chain(path) -> PosteriorChain:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    feats = tuple(meta["features"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    p = len(feats)
    alpha = data[:, 3::2][:, :p]
    beta = data[:, 4::2][:, :p]
    return PosteriorChain(feats, alpha, beta, data[:, 1].astype(bool), data[:, 2], int(meta["burn_in"]), meta)
