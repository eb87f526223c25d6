"""Ambient-stress time series: CSV ingestion, log-normal fitting, synthesis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ContractError, DataError, DegenerateFitError, ParseError, ValidationError

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StressSeries:
    """Hourly stress measurements.

    Parameters
    ----------
    timestamps : array of int
        Epoch hours, strictly increasing. Gaps are allowed where rows were
        dropped during cleaning.
    features : sequence of str
        Feature names, one per column of ``values``.
    values : array of shape (n, p)
        Non-negative finite measurements in native units.
    n_dropped : int
        Rows discarded while loading because of missing values.
    """

    timestamps: np.ndarray
    features: tuple[str, ...]
    values: np.ndarray
    n_dropped: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        feats = tuple(str(f) for f in self.features)
        if len(feats) < 1:
            raise ValidationError("at least one feature is required")
        if len(set(feats)) != len(feats):
            raise ValidationError(f"feature names must be unique: {feats}")
        if vals.shape != (ts.size, len(feats)):
            raise ValidationError(
                f"values shape {vals.shape} does not match {ts.size} timestamps x {len(feats)} features"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError("stress values must be finite")
        if np.any(vals < 0):
            raise ValidationError("stress values must be non-negative")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            bad = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise ValidationError(f"timestamps not strictly increasing at row {bad}")
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "features", feats)

    def __len__(self):
        return self.timestamps.size

    def column(self, feature: str) -> np.ndarray:
        try:
            return self.values[:, self.features.index(feature)]
        except ValueError:
            raise ContractError(f"unknown feature {feature!r}; have {self.features}") from None

    def select(self, features: Sequence[str]) -> np.ndarray:
        """Return the ``(n, len(features))`` sub-matrix in the requested order."""
        return np.column_stack([self.column(f) for f in features]) if features else np.empty((len(self), 0))

    def equals(self, other: "StressSeries") -> bool:
        return (
            self.features == other.features
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class StressDistribution:
    """Log-normal model of one stress feature.

    ``shift`` is added to raw measurements before taking logs; it is nonzero
    only when the fitted series contained zeros.
    """

    feature: str
    mu_ln: float
    sigma_ln: float
    shift: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.mu_ln) and math.isfinite(self.sigma_ln)):
            raise ContractError("log-normal parameters must be finite")
        if self.sigma_ln <= 0:
            raise ContractError(f"sigma_ln must be positive, got {self.sigma_ln}")
        if self.shift < 0:
            raise ContractError("shift must be non-negative")

    @property
    def _frozen(self):
        return stats.lognorm(s=self.sigma_ln, scale=math.exp(self.mu_ln), loc=-self.shift)

    def pdf(self, x):
        return self._frozen.pdf(x)

    def cdf(self, x):
        return self._frozen.cdf(x)

    def ppf(self, q):
        return self._frozen.ppf(q)

    def mean(self) -> float:
        return math.exp(self.mu_ln + 0.5 * self.sigma_ln**2) - self.shift

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        draws = np.exp(self.mu_ln + self.sigma_ln * rng.standard_normal(size))
        if self.shift:
            draws = np.maximum(draws - self.shift, 0.0)
        return draws

    def to_dict(self) -> dict:
        return {"feature": self.feature, "mu_ln": self.mu_ln, "sigma_ln": self.sigma_ln, "shift": self.shift}

    @classmethod
    def from_dict(cls, d: dict) -> "StressDistribution":
        return cls(d["feature"], float(d["mu_ln"]), float(d["sigma_ln"]), float(d.get("shift", 0.0)))


def _parse_timestamp(token: str, line: int) -> int:
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(token.replace("Z", "+00:00"))
    except ValueError:
        raise ParseError(f"unparseable timestamp {token!r}", line) from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    seconds = dt.timestamp()
    if seconds % 3600:
        raise ParseError(f"timestamp {token!r} is not on the hour", line)
    return int(seconds // 3600)


def load_stress_csv(path, schema: Sequence[str] | None = None) -> StressSeries:
    """Read a ``timestamp,<feature>...`` CSV into a validated series.

    Rows with a missing value are dropped and counted in ``n_dropped``. The
    raw rows, dropped or not, must lie on a one-hour grid.

    Raises
    ------
    ParseError
        Wrong column count, non-numeric value, bad timestamp, or header
        mismatch with ``schema``.
    ValidationError
        Duplicate or decreasing timestamps, non-hourly spacing, negative values.
    DataError
        No rows survive cleaning.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if not header or header[0] != "timestamp":
            raise ParseError("first column must be 'timestamp'", 1)
        features = header[1:]
        if schema is not None and list(schema) != features:
            raise ParseError(f"header {features} does not match schema {list(schema)}", 1)
        if not features:
            raise ParseError("no feature columns", 1)

        raw_ts, kept_ts, rows = [], [], []
        dropped = 0
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(rec)}", line)
            ts = _parse_timestamp(rec[0], line)
            if raw_ts and ts <= raw_ts[-1]:
                raise ValidationError(f"line {line}: timestamp {rec[0]!r} not strictly increasing")
            if raw_ts and ts - raw_ts[-1] != 1:
                raise ValidationError(f"line {line}: spacing of {ts - raw_ts[-1]} h, expected hourly rows")
            raw_ts.append(ts)
            cells = [c.strip() for c in rec[1:]]
            if any(c.lower() in MISSING_TOKENS for c in cells):
                dropped += 1
                continue
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                raise ParseError(f"non-numeric value in {cells}", line) from None
            if not all(math.isfinite(v) for v in vals):
                dropped += 1
                continue
            if any(v < 0 for v in vals):
                raise ValidationError(f"line {line}: negative stress value")
            kept_ts.append(ts)
            rows.append(vals)

    if not rows:
        raise DataError(f"{path}: no usable rows after dropping {dropped} incomplete rows")
    return StressSeries(np.array(kept_ts, dtype=np.int64), tuple(features), np.array(rows), n_dropped=dropped)


def write_stress_csv(series: StressSeries, path) -> None:
    """Write ``series`` in the format read by :func:`load_stress_csv`."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *series.features])
        for ts, row in zip(series.timestamps.tolist(), series.values.tolist()):
            w.writerow([ts, *(repr(v) for v in row)])


def fit_stress_distribution(series: StressSeries, feature: str) -> StressDistribution:
    """Fit a log-normal to one feature by log-moment matching.

    Zeros are handled by shifting every value by half the smallest positive
    observation.
    """
    x = series.column(feature)
    if np.unique(x).size < 2:
        raise DegenerateFitError(f"{feature!r} has fewer than two distinct values")
    shift = 0.0
    if np.any(x <= 0):
        shift = 0.5 * float(x[x > 0].min())
    logs = np.log(x + shift)
    return StressDistribution(feature, float(logs.mean()), float(logs.std(ddof=1)), shift)


def synthesize_stress(
    dist: StressDistribution | Sequence[StressDistribution],
    n_hours: int,
    rng_seed: int,
    start_hour: int = 0,
    resolution: float | Sequence[float | None] | None = None,
) -> StressSeries:
    """Draw i.i.d. hourly stress from one or more independent log-normals.

    ``resolution`` rounds draws to a measurement step (e.g. 0.1 m/s for an
    anemometer); ``None`` keeps full precision.
    """
    if n_hours < 1:
        raise ContractError(f"n_hours must be >= 1, got {n_hours}")
    dists = [dist] if isinstance(dist, StressDistribution) else list(dist)
    if isinstance(resolution, (list, tuple)):
        steps = list(resolution)
    else:
        steps = [resolution] * len(dists)
    rng = np.random.default_rng(rng_seed)
    cols = []
    for d, step in zip(dists, steps):
        col = d.sample(n_hours, rng)
        if step:
            col = np.round(col / step) * step
            col = np.round(col, max(0, -int(math.floor(math.log10(step)))) + 2)
        cols.append(col)
    ts = np.arange(start_hour, start_hour + n_hours, dtype=np.int64)
    return StressSeries(ts, tuple(d.feature for d in dists), np.column_stack(cols))


def draw_stress(source, features: Sequence[str], size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` stress vectors for ``features`` from a generic source.

    ``source`` may be a :class:`StressDistribution`, a sequence of them
    (treated as independent), a :class:`StressSeries` (rows resampled
    uniformly), or an array of fixed stress points (resampled uniformly).
    """
    features = list(features)
    if isinstance(source, StressDistribution):
        source = [source]
    if isinstance(source, StressSeries):
        idx = rng.integers(0, len(source), size)
        return source.select(features)[idx]
    if isinstance(source, (list, tuple)) and source and isinstance(source[0], StressDistribution):
        by_name = {d.feature: d for d in source}
        missing = [f for f in features if f not in by_name]
        if missing:
            raise ContractError(f"no stress distribution for {missing}")
        return np.column_stack([by_name[f].sample(size, rng) for f in features])
    pts = np.asarray(source, dtype=np.float64)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None] if len(features) == 1 else pts[None, :]
    if pts.shape[1] != len(features):
        raise ContractError(f"stress points have {pts.shape[1]} columns, expected {len(features)}")
    if pts.shape[0] == 1:
        return np.repeat(pts, size, axis=0)
    return pts[rng.integers(0, pts.shape[0], size)]
