"""Command-line entry point: ``fairalloc {allocate,backtest,simulate,bn}``.

Unfair backtest results are reported, not treated as failures: the exit status
is nonzero only for invalid input, I/O problems or computational errors, in
which case a single line ``fairalloc: error: <Kind>: <message>`` goes to
stderr.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import os
import sys

import numpy as np

from . import backtest as bt
from .bn import DEFAULT_MC_SAMPLES, DEFAULT_TOL, BnCache, resolve_bn, solve_bn
from .core import ESTIMATOR_IDS, PnlSample, check_level
from .errors import FairAllocError, ShapeMismatch
from .estimators import allocate
from .ingest import build_portfolio, load_returns_csv, write_panel_csv
from .simulate import load_model, sample_model

SAMPLE_ESTIMATORS = tuple(e for e in ESTIMATOR_IDS if e != "external")


class CliError(Exception):
    pass


def _count(text: str) -> int:
    # accepts "10000000" as well as "1e7"
    value = float(text)
    if value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(value)


def _weights(text: str):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be comma-separated numbers, got {text!r}") from None


def _level(text: str) -> float:
    try:
        return check_level(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_common(p, estimators):
    p.add_argument("--input", required=True, help="returns/P&L CSV with header date,<ticker_1>,...")
    p.add_argument("--estimator", required=True, choices=estimators, help="allocation estimator id")
    p.add_argument("--alpha", type=_level, default=0.05, help="ES reference level in (0,1) (default 0.05)")
    p.add_argument("--weights", type=_weights, default=None,
                   help="comma-separated notional per column; P&L = weight * return (default all 1)")
    p.add_argument("--params", default=None, help="model JSON (mu, sigma) for --estimator gaussian-true")
    p.add_argument("--seed", type=int, default=0, help="seed for the b_n Monte Carlo solve (default 0)")
    p.add_argument("--bn-samples", type=_count, default=DEFAULT_MC_SAMPLES,
                   help="Monte Carlo draws for a b_n solve (default 1e7)")
    p.add_argument("--bn-tol", type=float, default=DEFAULT_TOL, help="b_n residual tolerance (default 5e-4)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairalloc", description="Fair expected-shortfall capital allocation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allocate", help="estimate allocations from a P&L panel",
                       description="Write one allocation row per evaluation day (rolling) or a single row.")
    _add_common(p, SAMPLE_ESTIMATORS)
    p.add_argument("--window", type=int, default=None,
                   help="rolling learning window n; omit to use all rows once")
    p.add_argument("--output", required=True, help="output CSV: date,a_1..a_d,total")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("backtest", help="rolling backtest with fairness statistics",
                       description="Rolling allocations, G/G^i curves, Upsilon and W shifts.")
    _add_common(p, ESTIMATOR_IDS)
    p.add_argument("--window", type=int, required=True, help="learning window n")
    p.add_argument("--grid", type=float, default=bt.DEFAULT_GRID_STEP, help="level grid step (default 0.001)")
    p.add_argument("--exact", action="store_true", help="report step-boundary infima instead of grid values")
    p.add_argument("--allocations", default=None,
                   help="allocation CSV (date,a_1..a_d,total) for --estimator external")
    p.add_argument("--report", required=True, help="output JSON report")
    p.add_argument("--curves", required=True, help="output CSV beta,g_total,g_1..g_d")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("simulate", help="write a seeded synthetic P&L panel",
                       description="Draw i.i.d. Gaussian or moment-matched Student t P&L rows.")
    p.add_argument("--model", required=True, choices=("gaussian", "student-t"))
    p.add_argument("--params", required=True, help="JSON with mu, sigma and (student-t) nu")
    p.add_argument("--days", type=_count, required=True, help="number of rows")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bn", help="solve or look up the unbiased Gaussian ES constant b_n",
                       description="Print 'n alpha value precision method' and update the cache.")
    p.add_argument("--n", type=int, required=True, help="sample size (>= 2)")
    p.add_argument("--alpha", type=_level, required=True)
    p.add_argument("--samples", type=_count, default=DEFAULT_MC_SAMPLES, help="Monte Carlo draws (default 1e7)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="residual tolerance (default 5e-4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    p.set_defaults(func=cmd_bn)
    return parser


# -- helpers --------------------------------------------------------------------


def _require_file(path, flag):
    if path is None or not os.path.isfile(path):
        raise CliError(f"{flag} file not found: {path}")


def _validate(args):
    _require_file(args.input, "--input")
    window = getattr(args, "window", None)
    if window is not None and window < 2:
        raise CliError(f"--window must be at least 2, got {window}")
    if args.threads < 1:
        raise CliError("--threads must be at least 1")
    if args.estimator == "gaussian-true":
        _require_file(args.params, "--params")
    if args.estimator == "external":
        _require_file(args.allocations, "--allocations")


def _load_sample(args) -> PnlSample:
    panel = load_returns_csv(args.input)
    weights = args.weights if args.weights is not None else [1.0] * panel.d
    return build_portfolio(panel, weights)


def _model(args):
    return load_model(args.params, "gaussian") if args.estimator == "gaussian-true" else None


def _bn(args, n):
    if args.estimator != "gaussian-fair":
        return None
    return resolve_bn(n, args.alpha, mc_samples=args.bn_samples, tol=args.bn_tol,
                      seed=args.seed, threads=args.threads)


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def write_allocations_csv(path, allocs) -> None:
    d = allocs[0].a.size
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *(f"a_{i + 1}" for i in range(d)), "total"])
        for a in allocs:
            date = a.date.isoformat() if a.date else ""
            w.writerow([date, *(_fmt(v) for v in a.a), _fmt(a.total)])


def read_allocations_csv(path):
    """Dates and (m, d) matrix from an allocation CSV; the total column is ignored."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0]
    cols = [k for k, h in enumerate(header) if h.startswith("a_")]
    if header[0] != "date" or not cols:
        raise CliError(f"{path}: header must be date,a_1..a_d[,total]")
    dates = [_dt.date.fromisoformat(r[0]) for r in rows[1:]]
    mat = np.array([[float(r[k]) for k in cols] for r in rows[1:]], dtype=float)
    return dates, mat


# -- commands ---------------------------------------------------------------------


def cmd_allocate(args) -> int:
    _validate(args)
    sample = _load_sample(args)
    model = _model(args)
    if args.window is None:
        allocs = [allocate(sample, args.estimator, args.alpha, bn=_bn(args, sample.n), model=model)]
    else:
        bn = _bn(args, args.window)
        allocs = bt.rolling_allocations(sample, args.estimator, args.alpha, args.window,
                                        bn=bn, model=model, threads=args.threads)
    write_allocations_csv(args.output, allocs)
    return 0


def _external_series(args, sample: PnlSample):
    dates, mat = read_allocations_csv(args.allocations)
    index = {d: k for k, d in enumerate(sample.dates)}
    missing = [d for d in dates if d not in index]
    if missing:
        raise CliError(f"allocation date {missing[0]} has no realized row in {args.input}")
    rows = [index[d] for d in dates]
    if mat.shape[1] != sample.d:
        raise ShapeMismatch(f"{mat.shape[1]} allocation columns for {sample.d} constituents")
    return bt.secured_positions(sample.values[rows], mat, "external", args.alpha,
                                args.window, tuple(dates)), sample.values[rows]


def cmd_backtest(args) -> int:
    _validate(args)
    if not args.grid > 0:
        raise CliError("--grid must be positive")
    sample = _load_sample(args)
    if args.estimator == "external":
        series, realized = _external_series(args, sample)
    else:
        series = bt.run_backtest(sample, args.estimator, args.alpha, args.window,
                                 bn=_bn(args, args.window), model=_model(args), threads=args.threads)
        realized = sample.values[args.window:]
    report = bt.fairness_report(series, args.alpha, args.grid, exact=args.exact)
    report.labels = sample.labels
    aggregate = realized.sum(axis=1)
    if aggregate.size >= 8 and np.ptp(aggregate) > 0:
        stat, reject = bt.jarque_bera(aggregate)
        report.diagnostics["jarque_bera"] = stat
        if reject:
            report.flags.add("pnl-non-normal-1pct")
    report.write_json(args.report)
    report.write_curves_csv(args.curves)
    return 0


def cmd_simulate(args) -> int:
    _require_file(args.params, "--params")
    if args.threads < 1:
        raise CliError("--threads must be at least 1")
    model = load_model(args.params, args.model)
    sample = sample_model(model, args.days, args.seed, threads=args.threads)
    write_panel_csv(args.out, sample)
    return 0


def cmd_bn(args) -> int:
    if args.threads < 1:
        raise CliError("--threads must be at least 1")
    cache = BnCache()
    entry = cache.lookup(args.n, args.alpha)
    if entry is None:
        entry = solve_bn(args.n, args.alpha, mc_samples=args.samples, tol=args.tol,
                         seed=args.seed, threads=args.threads)
        cache.store(entry)
    print(entry.format())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FairAllocError, CliError, ValueError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"fairalloc: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
