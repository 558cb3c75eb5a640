"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package under test.  Index arithmetic is done with
exact fractions and tail averages with plain sorting and ``math.fsum``.
"""

import math
from fractions import Fraction

import mpmath
import numpy as np
from scipy import integrate, optimize, special, stats


def order_index(n, level):
    """1-based order-statistic index min(floor(n*level) + 1, n), exactly."""
    return min(math.floor(Fraction(n) * Fraction(str(level))) + 1, n)


def tail_rows(values, level):
    """Row indices whose value is at or below the j-th smallest value."""
    vals = [float(v) for v in values]
    threshold = sorted(vals)[order_index(len(vals), level) - 1]
    return [k for k, v in enumerate(vals) if v <= threshold]


def es(values, level):
    vals = [float(v) for v in values]
    rows = tail_rows(vals, level)
    return -math.fsum(vals[k] for k in rows) / len(rows)


def var(values, level):
    vals = sorted(float(v) for v in values)
    return -vals[order_index(len(vals), level) - 1]


def tail_allocation(x, level, divisor=None):
    """-sum of rows in the aggregate tail, divided by the tail size or ``divisor``."""
    x = [[float(c) for c in row] for row in x]
    s = [math.fsum(row) for row in x]
    rows = tail_rows(s, level)
    den = len(rows) if divisor is None else divisor
    return [-math.fsum(x[k][i] for k in rows) / den for i in range(len(x[0]))]


def margin_tail_mean(y, level, i):
    """-average of column i over the rows where the row sum is in its level tail."""
    y = [[float(c) for c in row] for row in y]
    rows = tail_rows([math.fsum(row) for row in y], level)
    return -math.fsum(y[k][i] for k in rows) / len(rows)


def sample_moments(x):
    """Means, aggregate mean and variance, covariances with the aggregate (1/n divisors)."""
    x = [[float(c) for c in row] for row in x]
    n, d = len(x), len(x[0])
    s = [math.fsum(row) for row in x]
    mu = [math.fsum(row[i] for row in x) / n for i in range(d)]
    mu_s = math.fsum(s) / n
    var_s = math.fsum((v - mu_s) ** 2 for v in s) / n
    cov = [math.fsum((x[k][i] - mu[i]) * (s[k] - mu_s) for k in range(n)) / n for i in range(d)]
    return mu, mu_s, var_s, cov


def regression_allocation(x, multiplier):
    mu, mu_s, var_s, cov = sample_moments(x)
    beta = [c / var_s for c in cov]
    risk = -mu_s + math.sqrt(var_s) * multiplier
    return [-(m - b * mu_s) + b * risk for m, b in zip(mu, beta)]


def normal_es_constant(alpha, dps=30):
    """phi(Phi^-1(alpha)) / alpha in high precision."""
    with mpmath.workdps(dps):
        a = mpmath.mpf(str(alpha))
        z = -mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * a)
        return float(mpmath.npdf(z) / a)


def gaussian_es(mu, sigma, alpha):
    """ES of N(mu, sigma^2) by direct integration of the quantile function."""
    val, _ = integrate.quad(lambda u: stats.norm.ppf(u, loc=mu, scale=sigma), 0.0, alpha, limit=200)
    return -val / alpha


def _bn_nodes(n, nodes=400):
    u, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (u + 1.0)
    v = np.sqrt(stats.chi2.ppf(u, n - 1) / n)
    return v, 0.5 * w


def bn_es(b, n, alpha, nodes=400):
    """ES_alpha(G + b V), G ~ N(0, 1 + 1/n), V = sqrt(chi2_{n-1} / n), by quadrature over V."""
    v, w = _bn_nodes(n, nodes)
    s = math.sqrt(1.0 + 1.0 / n)

    def cdf(q):
        return float(np.sum(w * special.ndtr((q - b * v) / s))) - alpha

    q = optimize.brentq(cdf, -50.0 - 10 * b, 50.0 + 10 * b, xtol=1e-14)
    z = (q - b * v) / s
    partial = np.sum(w * (b * v * special.ndtr(z) - s * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)))
    return -float(partial) / alpha


def bn(n, alpha=0.05, nodes=400):
    """Root of ES_alpha(G + b V) = 0 by quadrature."""
    c = normal_es_constant(alpha)
    return optimize.brentq(lambda b: bn_es(b, n, alpha, nodes), 0.5 * c, 40.0 * c, xtol=1e-12)


def jarque_bera(x):
    x = [float(v) for v in x]
    m = len(x)
    mean = math.fsum(x) / m
    m2 = math.fsum((v - mean) ** 2 for v in x) / m
    m3 = math.fsum((v - mean) ** 3 for v in x) / m
    m4 = math.fsum((v - mean) ** 4 for v in x) / m
    skew = m3 / m2**1.5
    kurt = m4 / m2**2 - 3.0
    return m / 6.0 * (skew**2 + kurt**2 / 4.0)
