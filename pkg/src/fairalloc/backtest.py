"""Rolling allocation backtests and deviation-from-fairness statistics.

On day k an allocation is estimated from the n observations preceding k and
added to the realized P&L of day k, giving secured margins ``y_i^k`` and the
secured aggregate ``xi^k = sum_i y_i^k``.  Two families of statistics judge
the allocation methodology:

* ``G_beta`` / ``G^i_beta``: minus the average of xi (resp. y_i) over the days
  where xi is at or below its empirical beta-quantile.  A fair methodology
  gives values near zero at the reference level alpha.
* ``Upsilon`` and ``W^i``: the smallest level, resp. the smallest shift of the
  level away from alpha, at which the aggregate (resp. margin) tail average
  changes sign.

The level searches run on a fixed grid (default step 1e-3).  Every statistic is
a step function of the level with jumps only at ``k / m``, so an exact mode
returns the infimum at those boundaries instead.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats as _stats

from .core import (
    AllocationVector,
    as_sample,
    check_level,
    empirical_es,
    stable_order,
    tail_count,
    tail_mask,
)
from .errors import EstimatorFailure, FairAllocError, IndexOutOfRange, ShapeMismatch
from .estimators import batch_allocate

DEFAULT_GRID_STEP = 1e-3
ROLLING_CHUNK = 256
JB_CRITICAL_1PCT = float(_stats.chi2.ppf(0.99, 2))


@dataclass(frozen=True)
class BacktestSeries:
    y: np.ndarray
    xi: np.ndarray
    estimator_id: str
    alpha: float
    window: int
    dates: Optional[tuple] = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim != 2 or y.shape[0] < 1:
            raise ShapeMismatch(f"secured margins must be an m x d matrix with m >= 1, got {y.shape}")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        xi = np.array(self.xi, dtype=float).reshape(-1)
        if xi.shape[0] != y.shape[0]:
            raise ShapeMismatch(f"xi has {xi.shape[0]} entries for {y.shape[0]} days")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.y.shape[1]


# -- rolling estimation ---------------------------------------------------------


def _window_stack(values: np.ndarray, n: int, m: int) -> np.ndarray:
    # (m, n, d) read-only view; window k covers rows k .. k+n-1
    return sliding_window_view(values, n, axis=0)[:m].transpose(0, 2, 1)


def rolling_allocation_matrix(
    data, estimator_id: str, alpha, n: int, bn=None, model=None, threads: int = 1
) -> np.ndarray:
    """(m, d) array of allocations, row k estimated from rows k .. k+n-1 (0-based)."""
    data = as_sample(data)
    n = int(n)
    m = data.n - n
    if n < 1 or m < 1:
        raise ValueError(f"need more than n = {n} rows, got {data.n}")
    alpha = check_level(alpha)
    windows = _window_stack(data.values, n, m)
    starts = list(range(0, m, ROLLING_CHUNK))

    def run(start):
        block = windows[start : start + ROLLING_CHUNK]
        try:
            return batch_allocate(block, estimator_id, alpha, bn=bn, model=model)
        except (FairAllocError, ValueError, ArithmeticError):
            for k in range(block.shape[0]):
                try:
                    batch_allocate(block[k], estimator_id, alpha, bn=bn, model=model)
                except (FairAllocError, ValueError, ArithmeticError) as exc:
                    raise EstimatorFailure(start + k + 1, exc) from exc
            raise

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    out = np.concatenate(parts, axis=0)
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.all(np.isfinite(out), axis=1)))
        raise EstimatorFailure(bad + 1, "non-finite allocation")
    return out


def rolling_allocations(
    data, estimator_id: str, alpha, n: int, bn=None, model=None, threads: int = 1
) -> list:
    """One AllocationVector per evaluation day, dated by the realized row it secures."""
    data = as_sample(data)
    if estimator_id == "gaussian-fair" and bn is None:
        from .bn import resolve_bn

        bn = resolve_bn(n, alpha)
    mat = rolling_allocation_matrix(data, estimator_id, alpha, n, bn=bn, model=model, threads=threads)
    alpha = float(alpha)
    out = []
    for k in range(mat.shape[0]):
        date = data.dates[n + k] if data.dates else None
        out.append(AllocationVector(mat[k], estimator_id, alpha, n, date))
    return out


def _alloc_matrix(allocs) -> np.ndarray:
    if isinstance(allocs, np.ndarray):
        return np.asarray(allocs, dtype=float)
    return np.array([a.a if isinstance(a, AllocationVector) else a for a in allocs], dtype=float)


def secured_positions(x, allocs, estimator_id="external", alpha=None, window=0, dates=None) -> BacktestSeries:
    """Secured margins ``y = x + a`` and their row sums ``xi``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    a = _alloc_matrix(allocs)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape != x.shape:
        raise ShapeMismatch(f"realized P&L has shape {x.shape}, allocations {a.shape}")
    if not isinstance(allocs, np.ndarray) and len(allocs) and isinstance(allocs[0], AllocationVector):
        first = allocs[0]
        estimator_id = first.estimator_id
        alpha = first.alpha if alpha is None else alpha
        window = first.window
    y = x + a
    return BacktestSeries(y=y, xi=y.sum(axis=1), estimator_id=estimator_id,
                          alpha=alpha, window=window, dates=dates)


def run_backtest(data, estimator_id: str, alpha, n: int, bn=None, model=None, threads: int = 1) -> BacktestSeries:
    """Rolling estimation over ``data`` (n + m rows) and the resulting secured series."""
    data = as_sample(data)
    if estimator_id == "gaussian-fair" and bn is None:
        from .bn import resolve_bn

        bn = resolve_bn(n, alpha)
    a = rolling_allocation_matrix(data, estimator_id, alpha, n, bn=bn, model=model, threads=threads)
    dates = data.dates[n:] if data.dates else None
    return secured_positions(data.values[n:], a, estimator_id, float(alpha), int(n), dates)


# -- tail statistics --------------------------------------------------------------


def g_total(series: BacktestSeries, beta) -> float:
    """``G_beta``: historical ES of the secured aggregate."""
    return empirical_es(series.xi, check_level(beta, "beta", allow_one=True))


def g_margin(series: BacktestSeries, i: int, beta) -> float:
    """``G^i_beta`` for constituent ``i`` (0-based): tail set from xi, average of y_i."""
    if not 0 <= i < series.d:
        raise IndexOutOfRange(f"constituent index {i} outside 0..{series.d - 1}")
    beta = check_level(beta, "beta", allow_one=True)
    mask = tail_mask(series.xi, beta)
    return -float(np.sum(series.y[mask, i]) / np.count_nonzero(mask))


class _TailTable:
    """Tail averages of xi and every y_i indexed by order-statistic position j = 1..m."""

    def __init__(self, series: BacktestSeries):
        m = series.m
        order = stable_order(series.xi)
        xs = series.xi[order]
        # tail set for index j is {xi <= xs[j-1]}: its size counts ties at the threshold
        self.count = np.searchsorted(xs, xs, side="right")
        csum_xi = np.cumsum(xs)
        csum_y = np.cumsum(series.y[order], axis=0)
        self.g = -csum_xi[self.count - 1] / self.count
        self.gi = -csum_y[self.count - 1] / self.count[:, None]
        self.m = m

    def index(self, level: float) -> int:
        # level 0 is the right-limit of (0, 1]: the single worst day
        return tail_count(self.m, level) if level > 0 else 1

    def at(self, levels):
        idx = np.array([self.index(b) for b in levels], dtype=int) - 1
        return self.g[idx], self.gi[idx]


def level_grid(step: float) -> np.ndarray:
    """``step, 2 step, ..., 1`` with 1 always included."""
    if not step > 0:
        raise ValueError(f"grid step must be positive, got {step}")
    k = int(np.floor(1.0 / step * (1.0 + 1e-12)))
    grid = np.round(np.arange(1, k + 1) * step, 12)
    grid = grid[grid <= 1.0]
    if grid.size == 0 or grid[-1] < 1.0:
        grid = np.append(grid, 1.0)
    return grid


def g_curves(series: BacktestSeries, betas):
    """``G_beta`` and ``G^i_beta`` over a sequence of levels: arrays (K,) and (K, d)."""
    return _TailTable(series).at(betas)


def _upsilon(table: _TailTable, grid_step, exact):
    if exact:
        hits = np.flatnonzero(table.g <= 0)
        if hits.size == 0:
            return 1.0, False
        return hits[0] / table.m, True
    grid = level_grid(grid_step)
    g, _ = table.at(grid)
    hits = np.flatnonzero(g <= 0)
    if hits.size == 0:
        return 1.0, False
    return float(grid[hits[0]]), True


def upsilon(series: BacktestSeries, grid_step=DEFAULT_GRID_STEP, exact=False):
    """Smallest level with ``G_beta <= 0``; returns ``(value, attained)``.

    When no level qualifies the value is 1 and ``attained`` is False.
    """
    return _upsilon(_TailTable(series), grid_step, exact)


def _eps_grid(limit: float, step: float) -> np.ndarray:
    k = int(np.floor(limit / step * (1.0 + 1e-12)))
    eps = np.round(np.arange(0, k + 1) * step, 12)
    if eps[-1] < limit:
        eps = np.append(eps, limit)
    return eps


def _w_shifts(table: _TailTable, i: int, alpha: float, grid_step, exact):
    m = table.m
    j_alpha = table.index(alpha)
    gi = table.gi[:, i]
    g_alpha = gi[j_alpha - 1]
    if exact:
        w_minus = alpha
        for j in range(j_alpha, 0, -1):
            if g_alpha * gi[j - 1] <= 0:
                w_minus = 0.0 if j == j_alpha else alpha - j / m
                break
        w_plus = 1.0 - alpha
        for j in range(j_alpha, m + 1):
            if g_alpha * gi[j - 1] <= 0:
                w_plus = 0.0 if j == j_alpha else (j - 1) / m - alpha
                break
    else:
        eps = _eps_grid(alpha, grid_step)
        levels = np.clip(np.round(alpha - eps, 12), 0.0, 1.0)
        idx = np.array([table.index(b) for b in levels]) - 1
        hits = np.flatnonzero(g_alpha * gi[idx] <= 0)
        w_minus = float(eps[hits[0]]) if hits.size else alpha
        eps = _eps_grid(1.0 - alpha, grid_step)
        levels = np.clip(np.round(alpha + eps, 12), 0.0, 1.0)
        idx = np.array([table.index(b) for b in levels]) - 1
        hits = np.flatnonzero(g_alpha * gi[idx] <= 0)
        w_plus = float(eps[hits[0]]) if hits.size else 1.0 - alpha
    # + 0.0 turns a zero left shift into +0 rather than -0
    w = -w_minus + 0.0 if w_minus < w_plus else w_plus
    return float(w_minus), float(w_plus), float(w)


def w_shifts(series: BacktestSeries, i: int, alpha, grid_step=DEFAULT_GRID_STEP, exact=False):
    """Left/right level shifts making margin ``i`` change sign, and the signed minimum.

    Returns ``(w_minus, w_plus, w)``; ``w = -w_minus`` if ``w_minus < w_plus``
    else ``w_plus``.
    """
    if not 0 <= i < series.d:
        raise IndexOutOfRange(f"constituent index {i} outside 0..{series.d - 1}")
    return _w_shifts(_TailTable(series), i, check_level(alpha), grid_step, exact)


# -- report -------------------------------------------------------------------


@dataclass
class FairnessReport:
    alpha: float
    grid_step: float
    exact: bool
    g_total_at_alpha: float
    g_margin_at_alpha: np.ndarray
    upsilon: float
    w_minus: np.ndarray
    w_plus: np.ndarray
    w: np.ndarray
    betas: np.ndarray
    g_curve: np.ndarray
    g_margin_curves: np.ndarray
    flags: set = field(default_factory=set)
    estimator_id: str = "external"
    window: int = 0
    m: int = 0
    labels: Optional[Sequence[str]] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        r = _round12
        d = int(self.g_margin_at_alpha.size)
        return {
            "estimator": self.estimator_id,
            "alpha": r(self.alpha),
            "window": int(self.window),
            "m": int(self.m),
            "grid_step": r(self.grid_step),
            "exact": bool(self.exact),
            "labels": list(self.labels) if self.labels else [f"x{i + 1}" for i in range(d)],
            "g_total_at_alpha": r(self.g_total_at_alpha),
            "g_margin_at_alpha": [r(v) for v in self.g_margin_at_alpha],
            "upsilon": r(self.upsilon),
            "w_minus": [r(v) for v in self.w_minus],
            "w_plus": [r(v) for v in self.w_plus],
            "w": [r(v) for v in self.w],
            "flags": sorted(self.flags),
            "diagnostics": {k: (r(v) if isinstance(v, float) else v) for k, v in self.diagnostics.items()},
            "g_curve": [[r(b), r(g)] for b, g in zip(self.betas, self.g_curve)],
            "g_margin_curves": [[r(v) for v in self.g_margin_curves[:, i]] for i in range(d)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    def write_curves_csv(self, path) -> None:
        d = self.g_margin_curves.shape[1]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", "g_total"] + [f"g_{i + 1}" for i in range(d)])
            for k, beta in enumerate(self.betas):
                row = [beta, self.g_curve[k], *self.g_margin_curves[k]]
                w.writerow([f"{v:.12g}" for v in row])


def _round12(x) -> float:
    return float(f"{float(x):.12g}")


def fairness_report(series: BacktestSeries, alpha=None, grid_step=DEFAULT_GRID_STEP, exact=False) -> FairnessReport:
    alpha = check_level(series.alpha if alpha is None else alpha)
    table = _TailTable(series)
    betas = level_grid(grid_step)
    g_curve, gi_curves = table.at(betas)
    ups, attained = _upsilon(table, grid_step, exact)
    shifts = np.array([_w_shifts(table, i, alpha, grid_step, exact) for i in range(series.d)])
    flags = set()
    if not attained:
        flags.add("upsilon-not-attained")
    mask = tail_mask(series.xi, alpha)
    count = np.count_nonzero(mask)
    return FairnessReport(
        alpha=alpha,
        grid_step=float(grid_step),
        exact=bool(exact),
        g_total_at_alpha=g_total(series, alpha),
        g_margin_at_alpha=-series.y[mask].sum(axis=0) / count,
        upsilon=float(ups),
        w_minus=shifts[:, 0],
        w_plus=shifts[:, 1],
        w=shifts[:, 2],
        betas=betas,
        g_curve=g_curve,
        g_margin_curves=gi_curves,
        flags=flags,
        estimator_id=series.estimator_id,
        window=series.window,
        m=series.m,
    )


def jarque_bera(xi):
    """Jarque-Bera statistic ``m/6 (skew^2 + excess_kurtosis^2 / 4)`` and the 1% rejection flag."""
    x = np.asarray(xi, dtype=float).reshape(-1)
    if x.size < 8:
        raise ValueError(f"Jarque-Bera needs at least 8 observations, got {x.size}")
    c = x - x.mean()
    m2 = np.mean(c**2)
    if m2 <= 0:
        raise ValueError("Jarque-Bera is undefined for a constant series")
    skew = np.mean(c**3) / m2**1.5
    excess = np.mean(c**4) / m2**2 - 3.0
    stat = x.size / 6.0 * (skew**2 + excess**2 / 4.0)
    return float(stat), bool(stat > JB_CRITICAL_1PCT)
