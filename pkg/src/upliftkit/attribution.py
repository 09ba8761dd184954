"""Exact path-dependent tree SHAP for the boosted trees, CATE-level SHAP for
the T-learner, and mean-|SHAP| rankings.

For one leaf, let the path from the root use unique features ``f_1..f_k``.
Feature ``f`` contributes a "zero" factor ``z_f`` (product of child/parent
cover ratios along its path nodes) and a "one" factor ``o_f(x)`` (1 if ``x``
satisfies every path condition on ``f``). The leaf's share of
``E[f(x) | x_S]`` is ``v * prod_{f in S} o_f * prod_{f not in S} z_f``, and
the Shapley value of feature ``i`` collects
``v * (o_i - z_i) * sum_s w(s, k) * c_s`` where ``c_s`` are the coefficients
of ``prod_{j != i} (z_j + o_j * x)`` and ``w(s, k) = s! (k-s-1)! / k!``.
Those products are built from prefix and suffix polynomials, vectorized over
records.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from ._validation import check_features
from .exceptions import AttributionError, ParameterError


@dataclass(frozen=True, eq=False)
class ShapMatrix:
    """Per-record additive attributions: ``base_value + values.sum(1)`` is the
    model margin (log-odds for the logistic loss)."""

    values: np.ndarray
    base_value: float
    target: str = "mu"
    scale: str = "margin"


def _leaf_paths(tree):
    """Yield ``(leaf, features, lo, hi, z)`` for every leaf of ``tree``.

    A record satisfies the path conditions on feature ``f`` iff
    ``lo_f < x_f <= hi_f``.
    """
    cover = np.asarray(tree.cover, dtype=np.float64)
    if cover.shape != tree.feature.shape or not np.all(np.isfinite(cover)) or (cover < 0).any():
        raise AttributionError("tree lacks per-node cover metadata")
    stack = [(0, {})]
    while stack:
        node, conds = stack.pop()
        f = tree.feature[node]
        if f < 0:
            feats = sorted(conds)
            yield (
                node,
                np.array(feats, dtype=np.intp),
                np.array([conds[j][0] for j in feats]),
                np.array([conds[j][1] for j in feats]),
                np.array([conds[j][2] for j in feats]),
            )
            continue
        thr = tree.threshold[node]
        parent = cover[node]
        for child, is_left in ((tree.left[node], True), (tree.right[node], False)):
            ratio = cover[child] / parent if parent > 0 else 0.0
            lo, hi, z = conds.get(f, (-np.inf, np.inf, 1.0))
            lo, hi = (lo, min(hi, thr)) if is_left else (max(lo, thr), hi)
            stack.append((child, {**conds, f: (lo, hi, z * ratio)}))


def _shapley_weights(k):
    W = np.zeros((k, k))
    for a in range(k):
        for b in range(k - a):
            s = a + b
            W[a, b] = factorial(s) * factorial(k - s - 1) / factorial(k)
    return W


def _tree_shap_into(phi, tree, X, scale):
    """Add ``scale * SHAP(tree)`` to ``phi``; return the tree's expected value."""
    n = X.shape[0]
    expected = 0.0
    for leaf, feats, lo, hi, z in _leaf_paths(tree):
        v = scale * tree.value[leaf]
        k = feats.size
        expected += v * float(np.prod(z))
        if k == 0 or v == 0.0:
            continue
        xs = X[:, feats]
        o = ((xs > lo) & (xs <= hi)).astype(np.float64)
        # pre[:, i] = prod_{j < i} (z_j + o_j x); suf[:, i] = prod_{j >= i} (z_j + o_j x)
        pre = np.zeros((n, k + 1, k + 1))
        suf = np.zeros((n, k + 1, k + 1))
        pre[:, 0, 0] = 1.0
        suf[:, k, 0] = 1.0
        for i in range(k):
            pre[:, i + 1] = pre[:, i] * z[i]
            pre[:, i + 1, 1:] += pre[:, i, :-1] * o[:, i : i + 1]
            j = k - 1 - i
            suf[:, j] = suf[:, j + 1] * z[j]
            suf[:, j, 1:] += suf[:, j + 1, :-1] * o[:, j : j + 1]
        weighted = np.einsum("nia,ab,nib->ni", pre[:, :k, :k], _shapley_weights(k), suf[:, 1:, :k])
        phi[:, feats] += v * (o - z) * weighted
    return expected


def tree_shap(model, X):
    """Exact SHAP values of a fitted :class:`GradientBoostedTrees` margin."""
    trees = getattr(model, "trees_", None)
    if trees is None:
        raise AttributionError("model is not fitted")
    X = check_features(X, model.n_features_in_)
    phi = np.zeros(X.shape)
    base = model.base_score_
    for tree in trees:
        base += _tree_shap_into(phi, tree, X, model.learning_rate)
    return ShapMatrix(phi, float(base), target="mu")


def cate_shap(model, X):
    """SHAP of ``mu1 - mu0`` for a fitted :class:`TLearner`, on the margin
    (log-odds) scale where additivity holds."""
    if not hasattr(model, "mu1_"):
        raise AttributionError("cate_shap needs a fitted T-learner")
    X = check_features(X, model.n_features_in_)
    s1 = tree_shap(model.mu1_, X)
    s0 = tree_shap(model.mu0_, X)
    return ShapMatrix(s1.values - s0.values, s1.base_value - s0.base_value, target="cate")


def shap_summary(shap, feature_names=None):
    """Features ranked by mean absolute SHAP, descending; ties keep index order."""
    mean_abs = np.abs(shap.values).mean(axis=0)
    d = mean_abs.size
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(d)]
    if len(names) != d:
        raise ParameterError(f"{len(names)} feature names for {d} SHAP columns")
    order = sorted(range(d), key=lambda j: (-mean_abs[j], j))
    return [(names[j], float(mean_abs[j])) for j in order]


def beeswarm_rows(shap, X, feature_names=None):
    """Long-format ``(row, feature, shap, feature_value)`` records for plotting.

    ``X`` should hold the standardized features the model was trained on.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = shap.values.shape
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(d)]
    return [(i, names[j], float(shap.values[i, j]), float(X[i, j])) for i in range(n) for j in range(d)]
