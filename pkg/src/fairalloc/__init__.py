"""Fair expected-shortfall capital allocation: estimators, b_n, backtests."""

from .backtest import (
    BacktestSeries,
    FairnessReport,
    fairness_report,
    g_margin,
    g_total,
    jarque_bera,
    rolling_allocations,
    run_backtest,
    secured_positions,
    upsilon,
    w_shifts,
)
from .bn import BnCache, BnEntry, bn_cache_lookup, resolve_bn, solve_bn
from .core import (
    AllocationVector,
    GaussianModel,
    PnlSample,
    PortfolioStats,
    aggregate,
    empirical_es,
    empirical_var,
    portfolio_stats,
)
from .estimators import (
    RegressionCoefficients,
    allocate,
    estimator_B,
    estimator_C,
    estimator_D_check,
    estimator_D_hat,
    gaussian_true_allocation,
    gaussian_true_es,
    mean_allocation,
    plugin_gaussian_es,
    regression_coeffs,
    unbiased_gaussian_es,
)
from .ingest import PortfolioWeights, ReturnPanel, build_portfolio, load_returns_csv, split_panel
from .simulate import StudentTModel, mvn_sample, mvt_sample, verify_fairness

__version__ = "0.1.0"
