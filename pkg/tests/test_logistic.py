import warnings

import numpy as np
import pytest
from scipy.special import expit

from upliftkit.exceptions import FitError
from upliftkit.logistic import (
    ConvergenceWarning,
    LogisticRegression,
    penalized_gradient,
    penalized_loglik,
)


def test_balanced_null():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(20_000, 3))
    y = np.tile([0, 1], 10_000)
    rng.shuffle(y)
    m = LogisticRegression(l2=1.0).fit(X, y)
    assert m.converged_
    assert abs(m.intercept_) < 0.03
    assert np.all(np.abs(m.coef_) < 0.05)
    assert np.all(np.abs(m.predict_proba(X) - 0.5) < 0.05)


def test_slope_recovery():
    rng = np.random.default_rng(1)
    x = rng.normal(size=100_000)
    y = (rng.random(x.size) < expit(2 * x - 1)).astype(int)
    m = LogisticRegression(l2=0.0).fit(x[:, None], y)
    assert m.coef_[0] == pytest.approx(2.0, abs=0.1)
    assert m.intercept_ == pytest.approx(-1.0, abs=0.1)


def test_matches_reference_solver():
    from sklearn.linear_model import LogisticRegression as Reference

    rng = np.random.default_rng(2)
    X = rng.normal(size=(3000, 4))
    y = (rng.random(3000) < expit(X @ [1.0, -0.5, 0.2, 0.0])).astype(int)
    ours = LogisticRegression(l2=2.0).fit(X, y)
    ref = Reference(C=1 / 2.0, tol=1e-12, max_iter=10_000).fit(X, y)
    np.testing.assert_allclose(ours.coef_, ref.coef_[0], atol=1e-6)
    assert ours.intercept_ == pytest.approx(ref.intercept_[0], abs=1e-6)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 3))
    y = (rng.random(200) < 0.4).astype(float)
    for _ in range(10):
        coef = rng.normal(scale=0.5, size=4)
        l2 = float(rng.uniform(0, 2))
        analytic = penalized_gradient(coef, X, y, l2)
        numeric = np.empty(4)
        for k in range(4):
            step = 1e-6 * max(1.0, abs(coef[k]))
            e = np.zeros(4)
            e[k] = step
            numeric[k] = (penalized_loglik(coef + e, X, y, l2) - penalized_loglik(coef - e, X, y, l2)) / (2 * step)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), 1e-12)
        assert rel < 1e-6


def test_intercept_not_penalized():
    X = np.zeros((100, 1))
    y = np.r_[np.ones(20), np.zeros(80)]
    m = LogisticRegression(l2=100.0).fit(X, y)
    np.testing.assert_allclose(m.predict_proba(X), 0.2, rtol=1e-12)


def test_single_class_is_fit_error():
    with pytest.raises(FitError):
        LogisticRegression().fit(np.ones((10, 2)), np.zeros(10))


def test_fewer_rows_than_features_is_fit_error():
    with pytest.raises(FitError):
        LogisticRegression().fit(np.eye(2, 5), [0, 1])


def test_non_convergence_is_flagged():
    X = np.r_[-np.ones(50), np.ones(50)][:, None]
    y = (X[:, 0] > 0).astype(int)
    with pytest.warns(ConvergenceWarning):
        m = LogisticRegression(l2=0.0, max_iter=3).fit(X, y)
    assert not m.converged_
    assert m.grad_norm_ > 1e-8


def test_round_trip():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 2))
    y = (rng.random(300) < expit(X[:, 0])).astype(int)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = LogisticRegression().fit(X, y)
    back = LogisticRegression.from_dict(m.to_dict())
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))
