"""Domain types, sample moments and order-statistic primitives.

Everything here is a pure function of its inputs.  Array helpers accept
leading batch dimensions so that rolling backtests and Monte Carlo loops can
evaluate many windows at once; the public wrappers work on a single sample.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import FactorizationFailure, ShapeMismatch

ESTIMATOR_IDS = (
    "mean",
    "gaussian-fair",
    "gaussian-plugin",
    "np-hat",
    "np-check",
    "gaussian-true",
    "external",
)


def check_level(level, name="alpha", allow_one=False) -> float:
    """Validate a risk level and return it as a float.

    ES/VaR reference levels live in (0, 1); backtest levels may also be 1.
    """
    x = float(level)
    upper_ok = x <= 1.0 if allow_one else x < 1.0
    if not (0.0 < x and upper_ok) or not np.isfinite(x):
        bound = "(0, 1]" if allow_one else "(0, 1)"
        raise ValueError(f"{name} must lie in {bound}, got {level!r}")
    return x


def tail_count(n: int, level: float) -> int:
    """Order-statistic index ``min(floor(n*level) + 1, n)``.

    The product is nudged by a relative 1e-12 before flooring so that grid
    levels such as 0.29 with n = 100 (28.999999999999996 in binary) land
    on the intended integer.
    """
    k = int(np.floor(n * level * (1.0 + 1e-12)))
    return min(k + 1, n)


@dataclass(frozen=True)
class PnlSample:
    """An n x d panel of P&L observations, rows are days."""

    values: np.ndarray
    dates: Optional[tuple] = None
    labels: Optional[tuple] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"P&L panel must be a non-empty n x d matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("P&L panel contains non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.dates is not None:
            dates = tuple(self.dates)
            if len(dates) != vals.shape[0]:
                raise ShapeMismatch(f"got {len(dates)} dates for {vals.shape[0]} rows")
            if any(b <= a for a, b in zip(dates, dates[1:])):
                raise ValueError("dates must be strictly increasing")
            object.__setattr__(self, "dates", dates)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != vals.shape[1]:
                raise ShapeMismatch(f"got {len(labels)} labels for {vals.shape[1]} columns")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "PnlSample":
        dates = None if self.dates is None else self.dates[start:stop]
        return PnlSample(self.values[start:stop], dates, self.labels)


@dataclass(frozen=True)
class PortfolioStats:
    mu: np.ndarray
    mu_s: float
    var_s: float
    cov: np.ndarray

    @property
    def sigma_s(self) -> float:
        return float(np.sqrt(self.var_s))


@dataclass(frozen=True)
class AllocationVector:
    a: np.ndarray
    estimator_id: str
    alpha: Optional[float]
    window: int
    date: Optional[_dt.date] = None

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise ValueError("allocation contains non-finite entries")
        if self.estimator_id not in ESTIMATOR_IDS:
            raise ValueError(f"unknown estimator id {self.estimator_id!r}")
        if self.alpha is not None:
            object.__setattr__(self, "alpha", check_level(self.alpha))
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def total(self) -> float:
        return float(np.sum(self.a))


@dataclass(frozen=True)
class GaussianModel:
    mu: np.ndarray
    sigma: np.ndarray
    labels: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        sigma = np.array(self.sigma, dtype=float)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma must be {mu.size}x{mu.size}, got {sigma.shape}")
        check_psd(sigma)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def var_s(self) -> float:
        return float(self.sigma.sum())

    @property
    def cov_s(self) -> np.ndarray:
        """Cov(X_i, S) for every constituent."""
        return self.sigma.sum(axis=1)


def check_psd(sigma: np.ndarray) -> None:
    scale = np.linalg.norm(sigma)
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(scale, 1e-300)):
        raise FactorizationFailure("covariance matrix must be symmetric")
    if sigma.size and np.linalg.eigvalsh(sigma).min() < -1e-10 * scale:
        raise FactorizationFailure("covariance matrix must be positive semidefinite")


def as_sample(sample) -> PnlSample:
    return sample if isinstance(sample, PnlSample) else PnlSample(sample)


def aggregate(sample) -> np.ndarray:
    """Row sums S^j of the panel."""
    return as_sample(sample).values.sum(axis=1)


def moments(x: np.ndarray):
    """Sample moments with 1/n divisors over axis -2 of an (..., n, d) array.

    Returns ``(mu, mu_s, var_s, cov)`` with shapes (..., d), (...), (...), (..., d).
    """
    s = x.sum(axis=-1)
    mu = x.mean(axis=-2)
    mu_s = s.mean(axis=-1)
    ds = s - mu_s[..., None]
    var_s = np.mean(ds * ds, axis=-1)
    cov = np.mean((x - mu[..., None, :]) * ds[..., None], axis=-2)
    return mu, mu_s, var_s, cov


def portfolio_stats(sample) -> PortfolioStats:
    mu, mu_s, var_s, cov = moments(as_sample(sample).values)
    return PortfolioStats(mu=mu, mu_s=float(mu_s), var_s=float(var_s), cov=cov)


def tail_threshold(v: np.ndarray, level: float) -> np.ndarray:
    """The j-th smallest entry along the last axis, j = tail_count(n, level)."""
    n = v.shape[-1]
    j = tail_count(n, level)
    return np.partition(v, j - 1, axis=-1)[..., j - 1]


def tail_mask(v: np.ndarray, level: float) -> np.ndarray:
    """Indicator ``v^k <= v^(j)`` along the last axis; ties at the threshold all count."""
    return v <= tail_threshold(v, level)[..., None]


def empirical_var(values, beta) -> float:
    """Historical value-at-risk ``-v^(j)`` with j = min(floor(n*beta) + 1, n)."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("need at least one observation")
    beta = check_level(beta, "beta", allow_one=True)
    return -float(tail_threshold(v, beta))


def empirical_es(values, alpha) -> float:
    """Historical expected shortfall: minus the mean of entries at or below v^(j)."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("need at least one observation")
    alpha = check_level(alpha, allow_one=True)
    mask = tail_mask(v, alpha)
    return -float(np.sum(v[mask]) / np.count_nonzero(mask))


def stable_order(values: np.ndarray) -> np.ndarray:
    """Ascending permutation with ties kept in input order."""
    return np.argsort(values, kind="stable")


def coerce_dates(dates: Optional[Sequence]) -> Optional[tuple]:
    if dates is None:
        return None
    out = []
    for d in dates:
        if isinstance(d, _dt.datetime):
            out.append(d.date())
        elif isinstance(d, _dt.date):
            out.append(d)
        else:
            out.append(_dt.date.fromisoformat(str(d)))
    return tuple(out)
