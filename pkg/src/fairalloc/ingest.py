"""CSV return panels, fixed-notional portfolios and dataset splits.

Input files are UTF-8, comma separated, with a ``date,<ticker_1>,...`` header,
ISO dates and plain decimal numbers.  Row and column numbers in error
messages are 1-based positions in the file (the header is row 1, the date
column is column 1).
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import PnlSample
from .errors import BoundaryOutOfRange, MissingValue, NonMonotoneDates, ParseError, ShapeMismatch

_MISSING = {"", "na", "nan", "null", "none", "n/a", "-"}


@dataclass(frozen=True)
class ReturnPanel:
    dates: tuple
    tickers: tuple
    returns: np.ndarray

    def __post_init__(self):
        r = np.array(self.returns, dtype=float)
        if r.ndim != 2 or r.shape != (len(self.dates), len(self.tickers)):
            raise ShapeMismatch(
                f"returns shape {r.shape} does not match {len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise NonMonotoneDates("dates must be strictly increasing")
        r.setflags(write=False)
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "tickers", tuple(self.tickers))

    @property
    def n(self) -> int:
        return len(self.dates)

    @property
    def d(self) -> int:
        return len(self.tickers)


@dataclass(frozen=True)
class PortfolioWeights:
    """Signed monetary notional per ticker (+1 long $1, -1 short $1)."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if w.size == 0 or not np.any(w != 0):
            raise ValueError("portfolio weights need at least one nonzero entry")
        if not np.all(np.isfinite(w)):
            raise ValueError("portfolio weights must be finite")
        object.__setattr__(self, "w", w)


def load_returns_csv(path) -> ReturnPanel:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file", row=1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "date":
        raise ParseError(f"{path}: header must be 'date,<ticker_1>,...'", row=1)
    tickers = tuple(header[1:])
    d = len(tickers)
    dates, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 1:
            raise ParseError(f"{path}: expected {d + 1} fields, got {len(row)}", row=r)
        try:
            date = _dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise ParseError(f"{path}: bad date {row[0]!r}", row=r, column=1) from None
        vals = []
        for c, cell in enumerate(row[1:], start=2):
            text = cell.strip()
            if text.lower() in _MISSING:
                raise MissingValue(f"{path}: missing value", row=r, column=c)
            try:
                x = float(text)
            except ValueError:
                raise ParseError(f"{path}: not a number {cell!r}", row=r, column=c) from None
            if not math.isfinite(x):
                raise MissingValue(f"{path}: non-finite value {cell!r}", row=r, column=c)
            vals.append(x)
        if dates and date <= dates[-1]:
            raise NonMonotoneDates(f"{path}: date {date} does not follow {dates[-1]}", row=r, column=1)
        dates.append(date)
        values.append(vals)
    if not dates:
        raise ParseError(f"{path}: no data rows", row=2)
    return ReturnPanel(tuple(dates), tickers, np.array(values, dtype=float))


def build_portfolio(panel: ReturnPanel, weights: Union[PortfolioWeights, Sequence[float]]) -> PnlSample:
    """Daily P&L ``w_i * r_i`` of fixed-notional positions (no compounding)."""
    if not isinstance(weights, PortfolioWeights):
        weights = PortfolioWeights(weights)
    if weights.w.size != panel.d:
        raise ShapeMismatch(f"{weights.w.size} weights for {panel.d} tickers")
    return PnlSample(panel.returns * weights.w, panel.dates, panel.tickers)


def split_panel(panel: ReturnPanel, boundary) -> tuple:
    """Rows strictly before ``boundary`` and the rest."""
    if not isinstance(boundary, _dt.date):
        boundary = _dt.date.fromisoformat(str(boundary))
    if not panel.dates[0] < boundary <= panel.dates[-1]:
        raise BoundaryOutOfRange(
            f"boundary {boundary} must lie in ({panel.dates[0]}, {panel.dates[-1]}]"
        )
    k = sum(1 for d in panel.dates if d < boundary)
    head = ReturnPanel(panel.dates[:k], panel.tickers, panel.returns[:k])
    tail = ReturnPanel(panel.dates[k:], panel.tickers, panel.returns[k:])
    return head, tail


def panel_from_sample(sample: PnlSample) -> ReturnPanel:
    labels = sample.labels or tuple(f"x{i + 1}" for i in range(sample.d))
    if sample.dates is None:
        raise ValueError("sample has no dates")
    return ReturnPanel(sample.dates, labels, sample.values)


def write_panel_csv(path, data: Union[ReturnPanel, PnlSample]) -> None:
    """Write a panel with 12 significant digits per value."""
    if isinstance(data, PnlSample):
        data = panel_from_sample(data)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *data.tickers])
        for date, row in zip(data.dates, data.returns):
            w.writerow([date.isoformat(), *(f"{v:.12g}" for v in row)])
