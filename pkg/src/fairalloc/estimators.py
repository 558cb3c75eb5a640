"""Allocation and expected-shortfall estimators.

Every allocation estimator maps a learning sample to a vector a with
``sum(a)`` equal to the matching aggregate risk estimate:

===============  ===========================================  =====================
estimator id     allocation                                   aggregate
===============  ===========================================  =====================
mean             -mu_i                                        -mu_S
gaussian-fair    -alpha_i + beta_i * (-mu_S + sigma_S * b_n)  unbiased Gaussian ES
gaussian-plugin  -mu_i + cov_i / sigma_S * c_alpha            plug-in Gaussian ES
np-hat           minus tail average of X_i over worst days    historical ES
np-check         minus tail sum of X_i divided by n * alpha
===============  ===========================================  =====================

where ``c_alpha = phi(Phi^-1(alpha)) / alpha`` and the worst days are the rows
with ``S^k <= S^(floor(n alpha) + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import (
    AllocationVector,
    GaussianModel,
    PnlSample,
    PortfolioStats,
    as_sample,
    check_level,
    moments,
    tail_mask,
)
from .errors import DegenerateVariance

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def normal_es_multiplier(alpha) -> float:
    """``phi(Phi^-1(alpha)) / alpha``: ES of a standard normal P&L at level alpha."""
    alpha = check_level(alpha)
    z = special.ndtri(alpha)
    return float(np.exp(-0.5 * z * z) / _SQRT_2PI / alpha)


@dataclass(frozen=True)
class RegressionCoefficients:
    beta: np.ndarray
    alpha_reg: np.ndarray


def _bn_value(bn) -> float:
    return float(getattr(bn, "value", bn))


def _degenerate(var_s, mu_s, s_scale):
    # variances at the level of floating round-off count as zero
    tiny = (np.finfo(float).eps * np.maximum(s_scale, np.abs(mu_s))) ** 2
    return var_s <= tiny


def regression_coeffs(stats: PortfolioStats) -> RegressionCoefficients:
    """Slope and intercept of each constituent regressed on the aggregate."""
    if not stats.var_s > 0:
        raise DegenerateVariance("aggregate P&L has zero sample variance")
    beta = np.asarray(stats.cov) / stats.var_s
    alpha_reg = np.asarray(stats.mu) - beta * stats.mu_s
    return RegressionCoefficients(beta=beta, alpha_reg=alpha_reg)


def plugin_gaussian_es(stats: PortfolioStats, alpha) -> float:
    return -stats.mu_s + stats.sigma_s * normal_es_multiplier(alpha)


def unbiased_gaussian_es(stats: PortfolioStats, alpha, bn) -> float:
    check_level(alpha)
    return -stats.mu_s + stats.sigma_s * _bn_value(bn)


def gaussian_true_es(model: GaussianModel, alpha) -> float:
    var_s = model.var_s
    if var_s < 0:
        # only possible through round-off on a PSD matrix
        var_s = 0.0
    return float(-model.mu.sum() + np.sqrt(var_s) * normal_es_multiplier(alpha))


def gaussian_true_allocation(model: GaussianModel, alpha) -> AllocationVector:
    """Closed-form fair ES allocation of a jointly Gaussian portfolio."""
    alpha = check_level(alpha)
    var_s = model.var_s
    if not var_s > 0:
        raise DegenerateVariance("model aggregate has zero variance")
    a = -model.mu + model.cov_s * normal_es_multiplier(alpha) / np.sqrt(var_s)
    return AllocationVector(a, "gaussian-true", alpha, 0)


# -- batch kernels over (..., n, d) arrays ---------------------------------


def _regression_allocation(x: np.ndarray, multiplier: float) -> np.ndarray:
    mu, mu_s, var_s, cov = moments(x)
    if np.any(_degenerate(var_s, mu_s, np.abs(x.sum(axis=-1)).max(axis=-1))):
        raise DegenerateVariance("aggregate P&L has zero sample variance")
    beta = cov / var_s[..., None]
    alpha_reg = mu - beta * mu_s[..., None]
    risk = -mu_s + np.sqrt(var_s) * multiplier
    return -alpha_reg + beta * risk[..., None]


def _tail_sums(x: np.ndarray, alpha: float):
    mask = tail_mask(x.sum(axis=-1), alpha)
    sums = np.einsum("...k,...ki->...i", mask.astype(float), x)
    return sums, mask.sum(axis=-1)


def batch_allocate(x, estimator_id: str, alpha, bn=None, model=None) -> np.ndarray:
    """Allocations for a stack of learning windows ``x`` of shape (..., n, d)."""
    x = np.asarray(x, dtype=float)
    alpha = check_level(alpha)
    if estimator_id == "mean":
        return -x.mean(axis=-2)
    if estimator_id == "gaussian-fair":
        if bn is None:
            raise ValueError("gaussian-fair needs the b_n constant")
        return _regression_allocation(x, _bn_value(bn))
    if estimator_id == "gaussian-plugin":
        return _regression_allocation(x, normal_es_multiplier(alpha))
    if estimator_id == "np-hat":
        sums, count = _tail_sums(x, alpha)
        return -sums / count[..., None]
    if estimator_id == "np-check":
        sums, _ = _tail_sums(x, alpha)
        return -sums / (x.shape[-2] * alpha)
    if estimator_id == "gaussian-true":
        if model is None:
            raise ValueError("gaussian-true needs a GaussianModel")
        a = gaussian_true_allocation(model, alpha).a
        return np.broadcast_to(a, x.shape[:-2] + a.shape).copy()
    raise ValueError(f"estimator {estimator_id!r} cannot be computed from a sample")


# -- single-sample wrappers --------------------------------------------------


def _wrap(sample: PnlSample, estimator_id, alpha, bn=None, model=None) -> AllocationVector:
    a = batch_allocate(sample.values, estimator_id, alpha, bn=bn, model=model)
    date = sample.dates[-1] if sample.dates else None
    return AllocationVector(a, estimator_id, float(alpha), sample.n, date)


def mean_allocation(sample, alpha=None) -> AllocationVector:
    """``-mu_i``; fair for the expectation risk measure.  ``alpha`` is metadata only."""
    sample = as_sample(sample)
    a = -sample.values.mean(axis=0)
    date = sample.dates[-1] if sample.dates else None
    return AllocationVector(a, "mean", alpha, sample.n, date)


def estimator_B(sample, alpha, bn) -> AllocationVector:
    """Fair Gaussian allocation ``-alpha_i + beta_i * R``, R the unbiased ES estimate."""
    return _wrap(as_sample(sample), "gaussian-fair", alpha, bn=bn)


def estimator_C(sample, alpha) -> AllocationVector:
    """Plug-in Gaussian allocation; fair only as n grows."""
    return _wrap(as_sample(sample), "gaussian-plugin", alpha)


def estimator_D_hat(sample, alpha) -> AllocationVector:
    return _wrap(as_sample(sample), "np-hat", alpha)


def estimator_D_check(sample, alpha) -> AllocationVector:
    return _wrap(as_sample(sample), "np-check", alpha)


def allocate(sample, estimator_id: str, alpha, bn=None, model=None) -> AllocationVector:
    sample = as_sample(sample)
    if estimator_id == "mean":
        return mean_allocation(sample, alpha)
    if estimator_id == "gaussian-true":
        out = gaussian_true_allocation(model, alpha)
        date = sample.dates[-1] if sample.dates else None
        return AllocationVector(out.a, out.estimator_id, out.alpha, sample.n, date)
    return _wrap(sample, estimator_id, alpha, bn=bn, model=model)
