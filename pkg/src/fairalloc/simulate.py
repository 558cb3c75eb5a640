"""Seeded scenario generators and the nested Monte Carlo fairness check.

Random streams are split into fixed-size chunks, each with its own child of
``SeedSequence(seed)``, so panels and verifier outputs do not depend on how
many threads draw them.
"""

from __future__ import annotations

import datetime as _dt
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import GaussianModel, PnlSample, check_level, check_psd, tail_mask
from .errors import FactorizationFailure
from .estimators import batch_allocate

SAMPLE_CHUNK = 4096
VERIFY_CHUNK = 5000

# Daily P&L moments of a $1 long / $1 short book in eight S&P 500 names
# (long AAPL, AMZN, BA, DIS, HD, KO; short JPM, MSFT), 2015-2018.
LONG_SHORT_TICKERS = ("AAPL", "AMZN", "BA", "DIS", "HD", "KO", "JPM", "MSFT")
LONG_SHORT_WEIGHTS = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0)
LONG_SHORT_MU = (0.000786, 0.001549, 0.001660, 0.000195, 0.000650, 0.000413, -0.000401, -0.001146)
LONG_SHORT_SIGMA = (
    (0.000226, 0.000174, 0.000104, 0.000066, 0.000069, 0.000019, -0.000077, -0.000135),
    (0.000174, 0.000346, 0.000135, 0.000068, 0.000091, 0.000022, -0.000082, -0.000195),
    (0.000104, 0.000135, 0.000257, 0.000065, 0.000084, 0.000034, -0.000093, -0.000111),
    (0.000066, 0.000068, 0.000065, 0.000133, 0.000048, 0.000025, -0.000058, -0.000064),
    (0.000069, 0.000091, 0.000084, 0.000048, 0.000137, 0.000034, -0.000065, -0.000081),
    (0.000019, 0.000022, 0.000034, 0.000025, 0.000034, 0.000061, -0.000022, -0.000031),
    (-0.000077, -0.000082, -0.000093, -0.000058, -0.000065, -0.000022, 0.000149, 0.000085),
    (-0.000135, -0.000195, -0.000111, -0.000064, -0.000081, -0.000031, 0.000085, 0.000202),
)


def long_short_model(constituents: Optional[int] = None) -> GaussianModel:
    """Gaussian model of the eight-stock long/short book, optionally its first few names."""
    k = len(LONG_SHORT_MU) if constituents is None else int(constituents)
    mu = np.array(LONG_SHORT_MU[:k])
    sigma = np.array(LONG_SHORT_SIGMA)[:k, :k]
    return GaussianModel(mu, sigma, labels=LONG_SHORT_TICKERS[:k])


@dataclass(frozen=True)
class StudentTModel:
    """Multivariate t with mean ``mu`` and covariance exactly ``sigma``."""

    mu: np.ndarray
    sigma: np.ndarray
    nu: float
    labels: Optional[tuple] = None

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        sigma = np.array(self.sigma, dtype=float)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma must be {mu.size}x{mu.size}, got {sigma.shape}")
        if not float(self.nu) > 2:
            raise ValueError(f"nu must exceed 2 for a finite covariance, got {self.nu}")
        check_psd(sigma)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def scale_matrix(self) -> np.ndarray:
        return (self.nu - 2.0) / self.nu * self.sigma


Model = Union[GaussianModel, StudentTModel]


def psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Symmetric square root ``A`` with ``A @ A = sigma``.

    Eigenvalues down to ``-1e-10 * trace`` are treated as zero; anything more
    negative raises FactorizationFailure.
    """
    sigma = np.asarray(sigma, dtype=float)
    if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12 * max(np.abs(sigma).max(initial=0), 1e-300)):
        raise FactorizationFailure("covariance matrix is not symmetric")
    lam, q = np.linalg.eigh(sigma)
    tol = 1e-10 * max(np.trace(sigma), 0.0)
    if lam.size and lam.min() < -tol:
        raise FactorizationFailure(f"covariance matrix has eigenvalue {lam.min():.3g} < -{tol:.3g}")
    root = np.sqrt(np.clip(lam, 0.0, None))
    return (q * root) @ q.T


def _chunked(rows: int, chunk: int, seed: int, draw, threads: int) -> np.ndarray:
    n_chunks = max(1, -(-rows // chunk))
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [chunk] * (n_chunks - 1) + [rows - chunk * (n_chunks - 1)]

    def one(k):
        return draw(np.random.default_rng(seqs[k]), sizes[k])

    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(n_chunks)))
    else:
        parts = [one(k) for k in range(n_chunks)]
    return np.concatenate(parts, axis=0)


def _draw_fn(model: Model):
    if isinstance(model, StudentTModel):
        root = psd_sqrt(model.scale_matrix)
        mu, nu, d = model.mu, model.nu, model.d

        def draw(rng, size, shape=()):
            z = rng.standard_normal((size,) + shape + (d,)) @ root
            w = np.sqrt(rng.chisquare(nu, (size,) + shape) / nu)
            return mu + z / w[..., None]

    elif isinstance(model, GaussianModel):
        root = psd_sqrt(model.sigma)
        mu, d = model.mu, model.d

        def draw(rng, size, shape=()):
            return mu + rng.standard_normal((size,) + shape + (d,)) @ root

    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    return draw


def _synthetic_dates(rows: int, start=_dt.date(2000, 1, 3)):
    return tuple(start + _dt.timedelta(days=k) for k in range(rows))


def sample_model(model: Model, rows: int, seed: int, threads: int = 1, dates=True) -> PnlSample:
    rows = int(rows)
    if rows < 1:
        raise ValueError("rows must be positive")
    draw = _draw_fn(model)
    values = _chunked(rows, SAMPLE_CHUNK, seed, draw, threads)
    return PnlSample(values, _synthetic_dates(rows) if dates else None, model.labels)


def mvn_sample(model: GaussianModel, rows: int, seed: int, threads: int = 1) -> PnlSample:
    """i.i.d. multivariate normal rows."""
    return sample_model(model, rows, seed, threads)


def mvt_sample(model: StudentTModel, rows: int, seed: int, threads: int = 1) -> PnlSample:
    """i.i.d. multivariate t rows ``mu + Z / sqrt(Q / nu)`` with covariance ``sigma``."""
    return sample_model(model, rows, seed, threads)


def load_model(path, kind: str = "gaussian") -> Model:
    """Read ``{"mu": [...], "sigma": [[...]], "nu": optional, "labels": optional}``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return model_from_dict(raw, kind)


def model_from_dict(raw: dict, kind: str = "gaussian") -> Model:
    if not isinstance(raw, dict) or "mu" not in raw or "sigma" not in raw:
        raise ValueError("model parameters need 'mu' and 'sigma'")
    labels = tuple(raw["labels"]) if raw.get("labels") else None
    if kind == "gaussian":
        return GaussianModel(raw["mu"], raw["sigma"], labels=labels)
    if kind == "student-t":
        if raw.get("nu") is None:
            raise ValueError("student-t model needs 'nu'")
        return StudentTModel(raw["mu"], raw["sigma"], raw["nu"], labels=labels)
    raise ValueError(f"unknown model kind {kind!r}")


# -- nested Monte Carlo fairness check ------------------------------------------


@dataclass(frozen=True)
class FairnessCheck:
    residuals: np.ndarray
    standard_errors: np.ndarray
    aggregate: float
    aggregate_se: float
    replications: int
    measure: str

    def within(self, k: float = 3.0) -> np.ndarray:
        return np.abs(self.residuals) <= k * self.standard_errors


def _residuals(y: np.ndarray, measure: str, alpha: float) -> np.ndarray:
    if measure == "mean":
        return -y.mean(axis=0)
    mask = tail_mask(y.sum(axis=1), alpha)
    return -y[mask].sum(axis=0) / np.count_nonzero(mask)


def verify_fairness(
    estimator_id: str,
    model: Model,
    n: int,
    alpha,
    replications: int,
    seed: int,
    bn=None,
    measure: str = "es",
    batches: int = 50,
    threads: int = 1,
) -> FairnessCheck:
    """Nested Monte Carlo estimate of ``E[Z (X_i + A_i)]`` for an allocation estimator.

    Each replication draws a learning sample of size ``n`` and one independent
    evaluation row, estimates the allocation and records the secured margins.
    With ``measure="es"`` the tail is the set of replications whose secured
    aggregate lies at or below its empirical alpha-quantile and the residual of
    margin i is minus its tail average (so the residuals sum to the historical
    ES of the secured aggregate); with ``measure="mean"`` the residual is
    minus the plain average.  Standard errors come from ``batches`` contiguous
    batch means.
    """
    alpha = check_level(alpha)
    replications = int(replications)
    if replications < batches * 2:
        raise ValueError(f"need at least {2 * batches} replications")
    if measure not in ("es", "mean"):
        raise ValueError(f"unknown measure {measure!r}")
    if estimator_id == "gaussian-fair" and bn is None:
        from .bn import resolve_bn

        bn = resolve_bn(n, alpha)
    draw = _draw_fn(model)

    def one(rng, size):
        x = draw(rng, size, (n + 1,))
        a = batch_allocate(x[:, :n], estimator_id, alpha, bn=bn, model=model)
        return x[:, n] + a

    y = _chunked(replications, VERIFY_CHUNK, seed, one, threads)
    residuals = _residuals(y, measure, alpha)
    per_batch = np.array([_residuals(part, measure, alpha) for part in np.array_split(y, batches)])
    se = per_batch.std(axis=0, ddof=1) / np.sqrt(batches)
    agg_se = per_batch.sum(axis=1).std(ddof=1) / np.sqrt(batches)
    return FairnessCheck(
        residuals=residuals,
        standard_errors=se,
        aggregate=float(residuals.sum()),
        aggregate_se=float(agg_se),
        replications=replications,
        measure=measure,
    )
