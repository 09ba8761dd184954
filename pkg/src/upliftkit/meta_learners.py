"""S-, T- and X-learners over the built-in boosted trees.

All effects are differences of predicted probabilities, so every estimate
lies in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary, check_both_arms, check_features, check_target
from .exceptions import FitError, ParameterError
from .gbdt import GradientBoostedTrees
from .logistic import LogisticRegression


@dataclass(frozen=True, eq=False)
class CateEstimate:
    tau_hat: np.ndarray
    model_id: str

    @property
    def mean(self):
        return float(np.mean(self.tau_hat))

    @property
    def std(self):
        return float(np.std(self.tau_hat))

    def summary(self):
        return {"mean": self.mean, "std": self.std}


def _check_fit_inputs(X, treatment, y):
    X = check_features(X)
    t = check_binary(treatment, "treatment", X.shape[0])
    y = check_binary(y, "y", X.shape[0])
    check_both_arms(t)
    return X, t, y


class _MetaLearner(BaseEstimator):
    model_id = "?"

    def predict_cate(self, X):
        return CateEstimate(self.predict(X), self.model_id)

    def _base(self, **overrides):
        base = GradientBoostedTrees() if self.learner is None else self.learner
        return clone(base).set_params(**overrides)


class SLearner(_MetaLearner):
    """One outcome model over the features plus the treatment indicator.

    The indicator is the last input column and is never rescaled.
    """

    model_id = "S"

    def __init__(self, learner=None):
        self.learner = learner

    def fit(self, X, treatment, y):
        X, t, y = _check_fit_inputs(X, treatment, y)
        self.model_ = self._base(loss="logistic").fit(np.column_stack([X, t]), y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_features(X, self.n_features_in_)
        ones = np.ones((X.shape[0], 1))
        mu1 = self.model_.predict(np.hstack([X, ones]))
        mu0 = self.model_.predict(np.hstack([X, 0.0 * ones]))
        return mu1 - mu0

    def to_dict(self):
        return {"kind": "s_learner", "model": self.model_.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        m = cls()
        m.model_ = GradientBoostedTrees.from_dict(doc["model"])
        m.n_features_in_ = m.model_.n_features_in_ - 1
        return m


class TLearner(_MetaLearner):
    """Separate outcome models for the treated and control arms."""

    model_id = "T"

    def __init__(self, learner=None):
        self.learner = learner

    def fit(self, X, treatment, y):
        X, t, y = _check_fit_inputs(X, treatment, y)
        base = self._base(loss="logistic")
        for arm in (0, 1):
            size = int(np.count_nonzero(t == arm))
            if size < base.min_samples_leaf:
                raise FitError(
                    f"{'treated' if arm else 'control'} arm has {size} rows, "
                    f"fewer than min_samples_leaf={base.min_samples_leaf}"
                )
        self.mu1_ = clone(base).fit(X[t == 1], y[t == 1])
        self.mu0_ = clone(base).fit(X[t == 0], y[t == 0])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "mu1_")
        X = check_features(X, self.n_features_in_)
        return self.mu1_.predict(X) - self.mu0_.predict(X)

    def to_dict(self):
        return {"kind": "t_learner", "mu1": self.mu1_.to_dict(), "mu0": self.mu0_.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        m = cls()
        m.mu1_ = GradientBoostedTrees.from_dict(doc["mu1"])
        m.mu0_ = GradientBoostedTrees.from_dict(doc["mu0"])
        m.n_features_in_ = m.mu1_.n_features_in_
        return m


class XLearner(_MetaLearner):
    """Two-stage learner with imputed individual effects.

    Stage 1 is a :class:`TLearner`. Stage 2 regresses the imputed effects
    ``y - mu0(x)`` (treated rows) and ``mu1(x) - y`` (control rows) with
    squared-loss trees, and predictions blend the two as
    ``e(x) * tau0(x) + (1 - e(x)) * tau1(x)``.

    ``propensity_model`` may be fitted on the leading columns of ``X`` only,
    e.g. when ``X`` already carries an appended propensity column; it is then
    applied to those leading columns.
    """

    model_id = "X"

    def __init__(self, learner=None, propensity_l2=1.0):
        self.learner = learner
        self.propensity_l2 = propensity_l2

    def fit(self, X, treatment, y, propensity_model=None):
        X, t, y = _check_fit_inputs(X, treatment, y)
        self.n_features_in_ = X.shape[1]
        if propensity_model is None:
            propensity_model = LogisticRegression(l2=self.propensity_l2).fit(X, t)
        elif propensity_model.n_features_in_ > X.shape[1]:
            raise ParameterError(
                f"propensity model expects {propensity_model.n_features_in_} features, X has {X.shape[1]}"
            )
        self.propensity_model_ = propensity_model
        self.stage1_ = TLearner(self.learner).fit(X, t, y)
        return self.fit_stage2(X, t, y, self.stage1_.mu0_.predict(X), self.stage1_.mu1_.predict(X))

    def fit_stage2(self, X, treatment, y, mu0_hat, mu1_hat):
        """Fit the effect regressions from given stage-1 predictions.

        Useful on its own to plug in known outcome surfaces.
        """
        X = check_features(X)
        n = X.shape[0]
        t = check_binary(treatment, "treatment", n)
        y = check_target(y, n)
        mu0_hat, mu1_hat = check_target(mu0_hat, n, "mu0_hat"), check_target(mu1_hat, n, "mu1_hat")
        check_both_arms(t)
        treated, control = t == 1, t == 0
        base = self._base(loss="squared")
        self.tau1_ = clone(base).fit(X[treated], y[treated] - mu0_hat[treated])
        self.tau0_ = clone(base).fit(X[control], mu1_hat[control] - y[control])
        self.n_features_in_ = X.shape[1]
        return self

    def propensity(self, X):
        k = self.propensity_model_.n_features_in_
        return self.propensity_model_.predict_proba(X[:, :k])

    def predict(self, X, propensity=None):
        check_is_fitted(self, "tau1_")
        X = check_features(X, self.n_features_in_)
        e = self.propensity(X) if propensity is None else np.broadcast_to(
            np.asarray(propensity, dtype=np.float64), (X.shape[0],)
        )
        return e * self.tau0_.predict(X) + (1.0 - e) * self.tau1_.predict(X)

    def predict_cate(self, X, propensity=None):
        return CateEstimate(self.predict(X, propensity), self.model_id)

    def to_dict(self):
        return {
            "kind": "x_learner",
            "stage1": self.stage1_.to_dict(),
            "tau1": self.tau1_.to_dict(),
            "tau0": self.tau0_.to_dict(),
            "propensity": self.propensity_model_.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        m = cls()
        m.stage1_ = TLearner.from_dict(doc["stage1"])
        m.tau1_ = GradientBoostedTrees.from_dict(doc["tau1"])
        m.tau0_ = GradientBoostedTrees.from_dict(doc["tau0"])
        m.propensity_model_ = LogisticRegression.from_dict(doc["propensity"])
        m.n_features_in_ = m.tau1_.n_features_in_
        return m


def s_fit(X, treatment, y, params=None):
    learner = None if params is None else GradientBoostedTrees.from_params(params)
    return SLearner(learner).fit(X, treatment, y)


def t_fit(X, treatment, y, params=None):
    learner = None if params is None else GradientBoostedTrees.from_params(params)
    return TLearner(learner).fit(X, treatment, y)


def x_fit(X, treatment, y, propensity_model=None, params=None):
    learner = None if params is None else GradientBoostedTrees.from_params(params)
    return XLearner(learner).fit(X, treatment, y, propensity_model)
