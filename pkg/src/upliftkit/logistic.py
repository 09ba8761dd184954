"""L2-penalized logistic regression solved by iteratively reweighted least squares."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary, check_features
from .exceptions import FitError, ParameterError


class ConvergenceWarning(UserWarning):
    pass


def penalized_loglik(coef, X, y, l2):
    """Log-likelihood minus ``l2/2 * ||w||^2``; ``coef = [intercept, w...]``.

    The intercept is not penalized.
    """
    z = coef[0] + X @ coef[1:]
    return float(np.sum(y * z - np.logaddexp(0.0, z)) - 0.5 * l2 * np.dot(coef[1:], coef[1:]))


def penalized_gradient(coef, X, y, l2):
    r = y - expit(coef[0] + X @ coef[1:])
    grad = np.empty_like(coef)
    grad[0] = r.sum()
    grad[1:] = X.T @ r - l2 * coef[1:]
    return grad


class LogisticRegression(BaseEstimator):
    """Binary logistic regression.

    Newton-Raphson (IRLS) iterations on the penalized log-likelihood until the
    gradient norm drops to ``tol`` or ``max_iter`` is reached. A run that
    stops on ``max_iter`` sets ``converged_ = False`` and warns.
    """

    def __init__(self, l2=1.0, tol=1e-8, max_iter=100):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        if self.l2 < 0:
            raise ParameterError(f"l2 must be non-negative, got {self.l2}")
        X = check_features(X)
        n, d = X.shape
        y = check_binary(y, "y", n).astype(np.float64)
        if n < d:
            raise FitError(f"logistic fit needs at least as many rows ({n}) as features ({d})")
        if y.min() == y.max():
            raise FitError(f"logistic fit needs both classes; every target is {int(y[0])}")

        Xa = np.column_stack([np.ones(n), X])
        penalty = np.full(d + 1, self.l2)
        penalty[0] = 0.0
        coef = np.zeros(d + 1)
        coef[0] = np.log(y.mean() / (1.0 - y.mean()))
        grad = penalized_gradient(coef, X, y, self.l2)
        it = 0
        while np.linalg.norm(grad) > self.tol and it < self.max_iter:
            p = expit(Xa @ coef)
            W = p * (1.0 - p)
            H = (Xa * W[:, None]).T @ Xa + np.diag(penalty)
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            coef = coef + step
            grad = penalized_gradient(coef, X, y, self.l2)
            it += 1

        self.intercept_ = float(coef[0])
        self.coef_ = coef[1:].copy()
        self.n_iter_ = it
        self.grad_norm_ = float(np.linalg.norm(grad))
        self.converged_ = self.grad_norm_ <= self.tol
        self.n_features_in_ = d
        if not self.converged_:
            warnings.warn(
                f"IRLS stopped after {it} iterations with gradient norm {self.grad_norm_:.3g}",
                ConvergenceWarning,
                stacklevel=2,
            )
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_features(X, self.n_features_in_)
        return self.intercept_ + X @ self.coef_

    def predict_proba(self, X):
        """Probability of the positive class, shape ``(n,)``."""
        return expit(self.decision_function(X))

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int8)

    def to_dict(self):
        check_is_fitted(self, "coef_")
        return {
            "kind": "logistic",
            "l2": self.l2,
            "intercept": self.intercept_,
            "weights": self.coef_.tolist(),
            "converged": self.converged_,
            "grad_norm": self.grad_norm_,
            "n_iter": self.n_iter_,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("kind") != "logistic":
            raise ParameterError(f"not a logistic document (kind={doc.get('kind')!r})")
        m = cls(l2=doc["l2"])
        m.intercept_ = float(doc["intercept"])
        m.coef_ = np.array(doc["weights"], dtype=np.float64)
        m.converged_ = bool(doc["converged"])
        m.grad_norm_ = float(doc["grad_norm"])
        m.n_iter_ = int(doc["n_iter"])
        m.n_features_in_ = m.coef_.size
        return m


def logistic_fit(X, y, l2=1.0):
    return LogisticRegression(l2=l2).fit(X, y)
