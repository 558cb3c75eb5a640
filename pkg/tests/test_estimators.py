import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fairalloc.core import GaussianModel, PnlSample, portfolio_stats
from fairalloc.errors import DegenerateVariance
from fairalloc.estimators import (
    allocate,
    batch_allocate,
    estimator_B,
    estimator_C,
    estimator_D_check,
    estimator_D_hat,
    gaussian_true_allocation,
    gaussian_true_es,
    mean_allocation,
    normal_es_multiplier,
    plugin_gaussian_es,
    regression_coeffs,
    unbiased_gaussian_es,
)

C05 = 2.062712807507426  # phi(Phi^-1(0.05)) / 0.05, from the mpmath oracle


def test_normal_multiplier_matches_high_precision_constant():
    for alpha in (0.01, 0.025, 0.05, 0.1, 0.3):
        assert normal_es_multiplier(alpha) == pytest.approx(oracles.normal_es_constant(alpha), rel=1e-13)
    assert normal_es_multiplier(0.05) == pytest.approx(C05, abs=1e-12)


def test_gaussian_true_es_standard_normal():
    m = GaussianModel([0.0], [[1.0]])
    assert abs(gaussian_true_es(m, 0.05) - 2.0627) < 1e-3
    assert gaussian_true_es(m, 0.05) == pytest.approx(oracles.gaussian_es(0.0, 1.0, 0.05), rel=1e-9)


def test_gaussian_true_es_general_model():
    m = GaussianModel([0.01, -0.03], [[0.04, 0.01], [0.01, 0.09]])
    sd = np.sqrt(0.04 + 0.09 + 0.02)
    assert gaussian_true_es(m, 0.1) == pytest.approx(oracles.gaussian_es(-0.02, sd, 0.1), rel=1e-9)


def test_gaussian_true_allocation_balance_and_euler():
    m = GaussianModel([0.01, -0.03, 0.002], [[0.04, 0.01, 0.0], [0.01, 0.09, -0.02], [0.0, -0.02, 0.05]])
    a = gaussian_true_allocation(m, 0.05)
    assert a.total == pytest.approx(gaussian_true_es(m, 0.05), rel=1e-13)
    # Euler: derivative of ES(sum (1 + h e_i) X_i) in h at 0
    for i in range(3):
        w = np.ones(3)
        w[i] += 1e-6
        bumped = GaussianModel(m.mu * w, m.sigma * np.outer(w, w))
        deriv = (gaussian_true_es(bumped, 0.05) - gaussian_true_es(m, 0.05)) / 1e-6
        assert a.a[i] == pytest.approx(deriv, rel=1e-4)


def test_regression_coefficients_sum(rng):
    x = rng.normal(size=(40, 5))
    rc = regression_coeffs(portfolio_stats(x))
    assert rc.beta.sum() == pytest.approx(1.0, abs=1e-13)
    assert rc.alpha_reg.sum() == pytest.approx(0.0, abs=1e-14)


def test_regression_estimators_match_oracle(rng):
    x = rng.normal(0.01, 0.02, size=(60, 4))
    np.testing.assert_allclose(estimator_C(x, 0.05).a, oracles.regression_allocation(x, C05), rtol=1e-11)
    np.testing.assert_allclose(estimator_B(x, 0.05, 2.1622880).a, oracles.regression_allocation(x, 2.1622880),
                               rtol=1e-11)


def test_balance_identities(rng):
    x = rng.normal(size=(80, 3))
    stats = portfolio_stats(x)
    s = x.sum(axis=1)
    assert mean_allocation(x).total == pytest.approx(-s.mean(), rel=1e-13)
    assert estimator_C(x, 0.05).total == pytest.approx(plugin_gaussian_es(stats, 0.05), rel=1e-13)
    assert estimator_B(x, 0.05, 2.2).total == pytest.approx(unbiased_gaussian_es(stats, 0.05, 2.2), rel=1e-13)
    assert estimator_D_hat(x, 0.05).total == pytest.approx(oracles.es(s, 0.05), rel=1e-13)


def test_tail_estimators_match_oracle_with_ties(rng):
    for _ in range(100):
        n = int(rng.integers(2, 50))
        d = int(rng.integers(1, 5))
        x = np.round(4 * rng.normal(size=(n, d))) / 4  # dyadic grid: exact sums, genuine ties
        alpha = float(rng.choice([0.05, 0.1, 0.2, 0.5]))
        np.testing.assert_allclose(estimator_D_hat(x, alpha).a, oracles.tail_allocation(x, alpha),
                                   rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(estimator_D_check(x, alpha).a,
                                   oracles.tail_allocation(x, alpha, divisor=n * alpha), rtol=1e-12, atol=1e-14)


def test_d_check_differs_only_by_tail_count():
    # n * alpha = 2.5, tail holds 3 rows
    x = np.arange(50.0).reshape(50, 1)
    assert estimator_D_hat(x, 0.05).a[0] == -1.0
    assert estimator_D_check(x, 0.05).a[0] == pytest.approx(-3.0 / 2.5)


def test_degenerate_variance():
    x = np.ones((10, 2))
    with pytest.raises(DegenerateVariance):
        estimator_C(x, 0.05)
    # offsetting columns: aggregate is constant, constituents are not
    y = np.column_stack([np.arange(10.0), -np.arange(10.0)])
    with pytest.raises(DegenerateVariance):
        estimator_B(y, 0.05, 2.2)
    # tail estimators still work
    assert estimator_D_hat(y, 0.05).total == 0.0


def test_unbiased_es_accepts_entry_like_object():
    class Entry:
        value = 3.0

    stats = portfolio_stats(np.array([[1.0], [3.0]]))
    assert unbiased_gaussian_es(stats, 0.05, Entry()) == pytest.approx(-2.0 + 3.0)


def test_batch_matches_single(rng):
    x = rng.normal(size=(4, 30, 3))
    for eid in ("mean", "gaussian-plugin", "np-hat", "np-check"):
        batch = batch_allocate(x, eid, 0.1)
        for k in range(4):
            np.testing.assert_allclose(batch[k], allocate(x[k], eid, 0.1).a, rtol=1e-13, atol=1e-15)


def test_allocate_metadata():
    s = PnlSample(np.arange(6.0).reshape(3, 2) ** 2)
    a = allocate(s, "np-hat", 0.05)
    assert (a.estimator_id, a.alpha, a.window) == ("np-hat", 0.05, 3)
    assert mean_allocation(s).alpha is None
    with pytest.raises(ValueError):
        allocate(s, "gaussian-fair", 0.05)
    with pytest.raises(ValueError):
        allocate(s, "no-such", 0.05)


# -- invariance properties -------------------------------------------------------

panels = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).normal(size=(25, 3)))
sample_ids = st.sampled_from(["gaussian-fair", "gaussian-plugin", "np-hat", "mean"])


def _alloc(x, eid):
    return allocate(x, eid, 0.1, bn=2.3).a


@settings(max_examples=60, deadline=None)
@given(panels, sample_ids, st.floats(-5, 5), st.integers(0, 2))
def test_cash_additivity(x, eid, c, i):
    shifted = x.copy()
    shifted[:, i] += c
    expected = _alloc(x, eid).copy()
    expected[i] -= c
    np.testing.assert_allclose(_alloc(shifted, eid), expected, rtol=1e-9, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(panels, sample_ids, st.floats(0.01, 100))
def test_positive_homogeneity(x, eid, lam):
    np.testing.assert_allclose(_alloc(lam * x, eid), lam * _alloc(x, eid), rtol=1e-9, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(panels, sample_ids, st.permutations(range(25)))
def test_row_permutation_invariance(x, eid, perm):
    np.testing.assert_allclose(_alloc(x[list(perm)], eid), _alloc(x, eid), rtol=1e-10, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(panels, sample_ids, st.permutations(range(3)))
def test_column_permutation_equivariance(x, eid, perm):
    perm = list(perm)
    np.testing.assert_allclose(_alloc(x[:, perm], eid), _alloc(x, eid)[perm], rtol=1e-10, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(panels, st.sampled_from(["gaussian-fair", "gaussian-plugin", "np-hat"]))
def test_balance_property(x, eid):
    a = _alloc(x, eid)
    s = x.sum(axis=1)
    stats = portfolio_stats(x)
    target = {
        "gaussian-fair": unbiased_gaussian_es(stats, 0.1, 2.3),
        "gaussian-plugin": plugin_gaussian_es(stats, 0.1),
        "np-hat": oracles.es(s, 0.1),
    }[eid]
    assert a.sum() == pytest.approx(target, rel=1e-12, abs=1e-12 * np.abs(a).sum())
