"""Propensity estimation: fit e(x), report its AUC, append it as a feature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._validation import check_both_arms
from .logistic import LogisticRegression

PROPENSITY_FEATURE = "propensity"


def roc_auc(labels, scores):
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores receive mid-ranks, so each tied (positive, negative) pair
    counts one half.
    """
    labels = np.asarray(labels).astype(bool)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@dataclass(frozen=True, eq=False)
class PropensityReport:
    model: LogisticRegression
    auc_train: float
    auc_test: float | None = None

    @property
    def auc(self):
        """Held-out AUC when a test set was scored, training AUC otherwise."""
        return self.auc_train if self.auc_test is None else self.auc_test

    def to_dict(self):
        out = {"auc": self.auc, "auc_train": self.auc_train}
        if self.auc_test is not None:
            out["auc_test"] = self.auc_test
        out["model"] = self.model.to_dict()
        return out


def fit_propensity(train, test=None, l2=1.0):
    """Logistic model of treatment on ``train.features``.

    Pass ``test`` to also score the train-fitted model on held-out rows.
    """
    check_both_arms(train.treatment, "fit a propensity model")
    model = LogisticRegression(l2=l2).fit(train.features, train.treatment)
    auc_train = roc_auc(train.treatment, model.predict_proba(train.features))
    auc_test = None
    if test is not None:
        auc_test = roc_auc(test.treatment, model.predict_proba(test.features))
    return PropensityReport(model, auc_train, auc_test)


def append_propensity(ds, model):
    """Return ``ds`` with one more trailing feature holding e(x)."""
    e = model.predict_proba(ds.features)
    X = np.column_stack([ds.features, e])
    return ds.with_features(X, ds.feature_names + (PROPENSITY_FEATURE,))
