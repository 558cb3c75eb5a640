"""The sample-size constant b_n of the unbiased Gaussian ES estimator.

For an i.i.d. Gaussian sample of size n the estimator ``-mu_hat + sigma_hat * b``
is unbiased in the risk sense when the secured position ``S + R`` carries zero
expected shortfall.  By location-scale invariance this reduces to the scalar
root problem

    ES_alpha(G + b * V) = 0,

with ``G ~ N(0, 1 + 1/n)`` independent of ``V = sqrt(chi2_{n-1} / n)``.

The solver draws V by Monte Carlo (fixed common random numbers, one
deterministic substream per chunk) and integrates G out analytically: given V,
``G + b V`` is Gaussian, so the mixture CDF and the tail expectation are
averages of normal CDF/PDF terms.  The map b -> ES is strictly decreasing,
which the bracketing step checks before the root search.
"""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize, special

from .core import check_level
from .errors import CorruptCache, InvalidN, NoConvergence
from .estimators import normal_es_multiplier

DEFAULT_MC_SAMPLES = 10_000_000
DEFAULT_TOL = 5e-4
CHUNK = 1 << 18
CACHE_ENV = "FAIRALLOC_CACHE"

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BnEntry:
    n: int
    alpha: float
    value: float
    method: str = "mc-root"
    precision: float = float("nan")

    def __post_init__(self):
        if self.method not in ("mc-root", "closed-form"):
            raise ValueError(f"unknown b_n method {self.method!r}")

    def format(self) -> str:
        return f"{self.n} {self.alpha:.12g} {self.value:.12g} {self.precision:.12g} {self.method}"


def draw_scale_factors(n: int, size: int, seed: int, threads: int = 1) -> np.ndarray:
    """``sqrt(chi2_{n-1} / n)`` draws; chunked substreams make the output thread-count free."""
    n_chunks = max(1, -(-size // CHUNK))
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [CHUNK] * (n_chunks - 1) + [size - CHUNK * (n_chunks - 1)]

    def one(k):
        rng = np.random.default_rng(seqs[k])
        return np.sqrt(rng.chisquare(n - 1, sizes[k]) / n)

    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(n_chunks)))
    else:
        parts = [one(k) for k in range(n_chunks)]
    return np.concatenate(parts)


class MixtureES:
    """Expected shortfall of ``G + b V`` averaged over fixed draws of V."""

    def __init__(self, v: np.ndarray, n: int, alpha: float):
        self.v = v
        self.s = math.sqrt(1.0 + 1.0 / n)
        self.alpha = alpha
        self.z_alpha = float(special.ndtri(alpha))

    def quantile(self, b: float) -> float:
        v, s, alpha = self.v, self.s, self.alpha
        q = b * float(v.mean()) + s * self.z_alpha
        for _ in range(50):
            z = (q - b * v) / s
            gap = float(special.ndtr(z).mean()) - alpha
            dens = float(np.exp(-0.5 * z * z).mean()) * _INV_SQRT_2PI / s
            if dens <= 0:
                break
            step = gap / dens
            q -= step
            if abs(step) <= 1e-14 * max(1.0, abs(q)):
                return q
        # Newton stalled: fall back to bracketing between the per-draw quantiles
        lo = b * float(v.min()) + s * self.z_alpha - 1.0
        hi = b * float(v.max()) + s * self.z_alpha + 1.0
        cdf = lambda t: float(special.ndtr((t - b * v) / s).mean()) - alpha
        return optimize.brentq(cdf, lo, hi, xtol=1e-14)

    def terms(self, b: float):
        """Per-draw pieces (h_k, F_k, z_k) at the mixture quantile q."""
        q = self.quantile(b)
        z = (q - b * self.v) / self.s
        big_f = special.ndtr(z)
        h = b * self.v * big_f - self.s * np.exp(-0.5 * z * z) * _INV_SQRT_2PI
        return q, h, big_f

    def __call__(self, b: float) -> float:
        _, h, _ = self.terms(b)
        return -float(h.mean()) / self.alpha

    def standard_error(self, b: float) -> float:
        # influence function of the ES functional: (h_k - q F_k) / alpha
        q, h, big_f = self.terms(b)
        infl = h - q * big_f
        return float(infl.std(ddof=1) / self.alpha / math.sqrt(infl.size))

    def slope(self, b: float) -> float:
        """|d ES / d b| = E[V 1{tail}] / alpha."""
        q, _, big_f = self.terms(b)
        return float((self.v * big_f).mean()) / self.alpha


def solve_bn(
    n: int,
    alpha,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    threads: int = 1,
) -> BnEntry:
    """Monte Carlo root of ``b -> ES_alpha(G + b V)``.

    Raises InvalidN for n < 2 and NoConvergence when the bracket cannot be
    established, the root search fails, or the Monte Carlo standard error is
    not below ``tol / 3``.
    """
    n = int(n)
    if n < 2:
        raise InvalidN(f"b_n needs n >= 2, got {n}")
    alpha = check_level(alpha)
    if mc_samples < 2:
        raise ValueError("mc_samples must be at least 2")

    es = MixtureES(draw_scale_factors(n, int(mc_samples), seed, threads), n, alpha)
    c = normal_es_multiplier(alpha)
    lo, hi = 0.5 * c, 3.0 * c
    f_lo = es(lo)
    if not f_lo > 0:
        raise NoConvergence(f"ES at lower bracket {lo:.6g} is {f_lo:.3g}, expected > 0")
    f_hi = es(hi)
    # small n puts the root far above 3c (about 26 c at n = 2 for alpha = 0.05)
    while f_hi >= 0 and hi < 256 * c:
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi = es(hi)
    if f_hi >= 0:
        raise NoConvergence(f"no sign change of ES on [{0.5 * c:.6g}, {hi:.6g}]")

    try:
        b = optimize.brentq(es, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    except RuntimeError as exc:
        raise NoConvergence(str(exc)) from exc
    residual = es(b)
    se = es.standard_error(b)
    if abs(residual) >= tol:
        raise NoConvergence(f"residual ES {residual:.3g} exceeds tolerance {tol:.3g}")
    if se >= tol / 3:
        raise NoConvergence(
            f"Monte Carlo standard error {se:.3g} is not below tol/3 = {tol / 3:.3g};"
            " increase mc_samples"
        )
    precision = (se + abs(residual)) / es.slope(b)
    return BnEntry(n=n, alpha=alpha, value=float(b), method="mc-root", precision=float(precision))


# -- persistent cache ---------------------------------------------------------


def default_cache_path() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "fairalloc" / "bn_cache.txt"


def _key(n, alpha):
    return int(n), round(float(alpha), 6)


class BnCache:
    """Plain-text store of b_n values, one ``n alpha value precision method`` record per line.

    The last line carries a SHA-256 checksum of the records.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else default_cache_path()

    def _read(self) -> dict:
        if not self.path.exists():
            return {}
        text = self.path.read_text(encoding="utf-8")
        if not text.strip():
            return {}
        lines = text.splitlines()
        body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
        sums = [ln for ln in lines if ln.startswith("# sha256 ")]
        if len(sums) != 1:
            raise CorruptCache(f"{self.path}: missing checksum line")
        expected = sums[0].split()[2]
        if _digest(body) != expected:
            raise CorruptCache(f"{self.path}: checksum mismatch")
        out = {}
        for ln in body:
            parts = ln.split()
            if len(parts) != 5:
                raise CorruptCache(f"{self.path}: malformed record {ln!r}")
            try:
                entry = BnEntry(
                    n=int(parts[0]),
                    alpha=float(parts[1]),
                    value=float(parts[2]),
                    precision=float(parts[3]),
                    method=parts[4],
                )
            except ValueError as exc:
                raise CorruptCache(f"{self.path}: malformed record {ln!r}") from exc
            out[_key(entry.n, entry.alpha)] = entry
        return out

    def lookup(self, n, alpha) -> Optional[BnEntry]:
        return self._read().get(_key(n, alpha))

    def store(self, entry: BnEntry) -> None:
        records = self._read()
        records[_key(entry.n, entry.alpha)] = entry
        body = [records[k].format() for k in sorted(records)]
        text = "\n".join(body + [f"# sha256 {_digest(body)}"]) + "\n"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".bn_cache.")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, self.path)


def _digest(lines) -> str:
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def bn_cache_lookup(n, alpha, path=None) -> Optional[BnEntry]:
    return BnCache(path).lookup(n, alpha)


def resolve_bn(n, alpha, cache_path=None, **solve_kwargs) -> BnEntry:
    """Cached b_n, solving and persisting it on a miss."""
    cache = BnCache(cache_path)
    entry = cache.lookup(n, alpha)
    if entry is None:
        entry = solve_bn(n, alpha, **solve_kwargs)
        cache.store(entry)
    return entry
