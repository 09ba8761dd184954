"""Histogram-based gradient-boosted decision trees.

Second-order boosting with leaf-wise (best-first) growth. Features are
quantile-binned once per fit; every split decision is made on per-bin sums
of gradients, hessians and row counts.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_sample_weight, check_target
from .data import BinningScheme
from .exceptions import ParameterError

# splits whose gain does not exceed this are treated as rounding noise
MIN_SPLIT_GAIN = 1e-12


@dataclass(frozen=True)
class GbdtParams:
    num_trees: int = 200
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_samples_leaf: int = 20
    l2_reg: float = 1.0
    loss: str = "logistic"
    feature_subsample: float = 1.0
    seed: int = 0
    max_bins: int = 255

    def validate(self):
        if self.num_trees < 0:
            raise ParameterError(f"num_trees must be non-negative, got {self.num_trees}")
        if not 0 < self.learning_rate <= 1:
            raise ParameterError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if self.max_leaves < 2:
            raise ParameterError(f"max_leaves must be at least 2, got {self.max_leaves}")
        if self.min_samples_leaf < 1:
            raise ParameterError(f"min_samples_leaf must be at least 1, got {self.min_samples_leaf}")
        if self.l2_reg < 0:
            raise ParameterError(f"l2_reg must be non-negative, got {self.l2_reg}")
        if self.loss not in ("logistic", "squared"):
            raise ParameterError(f"loss must be 'logistic' or 'squared', got {self.loss!r}")
        if not 0 < self.feature_subsample <= 1:
            raise ParameterError(f"feature_subsample must lie in (0, 1], got {self.feature_subsample}")
        if not 2 <= self.max_bins <= 255:
            raise ParameterError(f"max_bins must lie in [2, 255], got {self.max_bins}")
        return self


@dataclass(eq=False)
class DecisionTree:
    """Flattened binary tree. Leaves have ``feature == -1``.

    A record goes left at an internal node when
    ``x[feature] <= threshold`` (equivalently ``bin <= threshold_bin``).
    ``cover`` is the weighted training count reaching each node.
    """

    feature: np.ndarray
    threshold_bin: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def is_leaf(self):
        return self.feature < 0

    @property
    def n_leaves(self):
        return int(self.is_leaf.sum())

    def apply(self, X):
        """Leaf index reached by every row of raw feature matrix ``X``."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = np.arange(X.shape[0])
        while active.size:
            nd = node[active]
            internal = self.feature[nd] >= 0
            active, nd = active[internal], nd[internal]
            if not active.size:
                break
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return depth

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in _TREE_FIELDS}

    @classmethod
    def from_dict(cls, doc):
        return cls(**{k: np.array(doc[k], dtype=_TREE_FIELDS[k]) for k in _TREE_FIELDS})


_TREE_FIELDS = {
    "feature": np.intp,
    "threshold_bin": np.intp,
    "threshold": np.float64,
    "left": np.intp,
    "right": np.intp,
    "value": np.float64,
    "cover": np.float64,
    "count": np.int64,
}


def split_gain(GL, HL, GR, HR, l2):
    """Second-order gain of splitting a node into (left, right)."""
    return GL * GL / (HL + l2) + GR * GR / (HR + l2) - (GL + GR) ** 2 / (HL + HR + l2)


def best_split_from_histograms(hist_g, hist_h, hist_n, n_bins, allowed, min_samples_leaf, l2):
    """Scan all (feature, bin) thresholds and return ``(gain, feature, bin)``.

    Ties go to the lowest feature index, then the lowest bin threshold.
    Returns ``(-inf, -1, -1)`` when no admissible split exists.
    """
    GL = np.cumsum(hist_g, axis=1)[:, :-1]
    HL = np.cumsum(hist_h, axis=1)[:, :-1]
    NL = np.cumsum(hist_n, axis=1)[:, :-1]
    G = GL[:, -1:] + hist_g[:, -1:]
    H = HL[:, -1:] + hist_h[:, -1:]
    N = NL[:, -1:] + hist_n[:, -1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = split_gain(GL, HL, G - GL, H - HL, l2)
    B = hist_g.shape[1]
    ok = (NL >= min_samples_leaf) & (N - NL >= min_samples_leaf)
    ok &= np.arange(B - 1)[None, :] < (n_bins[:, None] - 1)
    ok &= allowed[:, None]
    ok &= np.isfinite(gain)
    gain = np.where(ok, gain, -np.inf)
    k = int(np.argmax(gain))
    best = gain.flat[k]
    if not np.isfinite(best):
        return -np.inf, -1, -1
    return float(best), k // (B - 1), k % (B - 1)


class _Node:
    __slots__ = ("id", "rows", "hist", "G", "H", "split")

    def __init__(self, id, rows, hist, G, H):
        self.id, self.rows, self.hist, self.G, self.H = id, rows, hist, G, H
        self.split = (-np.inf, -1, -1)


class _TreeGrower:
    def __init__(self, Xb_T, n_bins, cuts, g, h, w, params, allowed):
        self.Xb_T, self.n_bins, self.cuts = Xb_T, n_bins, cuts
        self.g, self.h, self.w = g, h, w
        self.p = params
        self.allowed = allowed
        self.B = int(n_bins.max())
        self.nodes = {k: [] for k in _TREE_FIELDS}

    def _histograms(self, rows):
        d, B = self.Xb_T.shape[0], self.B
        hg = np.zeros((d, B))
        hh = np.zeros((d, B))
        hn = np.zeros((d, B))
        g, h = self.g[rows], self.h[rows]
        for j in np.flatnonzero(self.allowed):
            b = self.Xb_T[j, rows]
            hg[j] = np.bincount(b, weights=g, minlength=B)
            hh[j] = np.bincount(b, weights=h, minlength=B)
            hn[j] = np.bincount(b, minlength=B)
        return hg, hh, hn

    def _new_node(self, rows, hist):
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        nid = len(self.nodes["feature"])
        for k, v in (
            ("feature", -1),
            ("threshold_bin", -1),
            ("threshold", np.nan),
            ("left", -1),
            ("right", -1),
            ("value", -G / (H + self.p.l2_reg)),
            ("cover", float(self.w[rows].sum())),
            ("count", rows.size),
        ):
            self.nodes[k].append(v)
        node = _Node(nid, rows, hist, G, H)
        if rows.size >= 2 * self.p.min_samples_leaf:
            node.split = best_split_from_histograms(
                *hist, self.n_bins, self.allowed, self.p.min_samples_leaf, self.p.l2_reg
            )
        return node

    def grow(self):
        root = np.arange(self.Xb_T.shape[1])
        heap, leaves = [], []

        def push(node):
            if node.split[0] > MIN_SPLIT_GAIN:
                heapq.heappush(heap, (-node.split[0], node.id, node))
            else:
                leaves.append(node)

        push(self._new_node(root, self._histograms(root)))
        n_leaves = 1
        while heap and n_leaves < self.p.max_leaves:
            _, _, node = heapq.heappop(heap)
            _, j, b = node.split
            go_left = self.Xb_T[j, node.rows] <= b
            left_rows, right_rows = node.rows[go_left], node.rows[~go_left]
            # histogram the smaller child; the sibling is parent minus child
            left_small = left_rows.size <= right_rows.size
            small_hist = self._histograms(left_rows if left_small else right_rows)
            large_hist = tuple(p - s for p, s in zip(node.hist, small_hist))
            node.hist = None
            left_hist, right_hist = (small_hist, large_hist) if left_small else (large_hist, small_hist)
            left = self._new_node(left_rows, left_hist)
            right = self._new_node(right_rows, right_hist)
            nd = self.nodes
            nd["feature"][node.id] = j
            nd["threshold_bin"][node.id] = b
            nd["threshold"][node.id] = float(self.cuts[j][b])
            nd["left"][node.id] = left.id
            nd["right"][node.id] = right.id
            push(left)
            push(right)
            n_leaves += 1
        leaves.extend(entry[2] for entry in heap)
        tree = DecisionTree(**{k: np.array(v, dtype=_TREE_FIELDS[k]) for k, v in self.nodes.items()})
        return tree, [(node.id, node.rows) for node in leaves]


def _loss_grad_hess(loss, F, y):
    if loss == "logistic":
        p = expit(F)
        return p - y, p * (1.0 - p)
    return F - y, np.ones_like(F)


def _loss_value(loss, F, y, w):
    if loss == "logistic":
        # log(1 + exp(F)) - y F, computed stably
        per = np.logaddexp(0.0, F) - y * F
    else:
        per = 0.5 * (F - y) ** 2
    return float(np.dot(w, per) / w.sum())


def normalize_weights(w):
    """Rescale weights to mean one.

    Dividing by the largest weight first is exact under any rescaling of the
    input that is itself exact, so such rescalings produce identical models.
    """
    u = w / w.max()
    return u * (u.size / u.sum())


class GradientBoostedTrees(BaseEstimator):
    """Gradient-boosted trees with logistic or squared loss.

    Parameters mirror :class:`GbdtParams`. ``predict`` returns probabilities
    for the logistic loss and raw values for the squared loss;
    ``decision_function`` returns the additive margin in both cases.

    Attributes
    ----------
    trees_ : list of DecisionTree
    base_score_ : float
        Initial margin (log-odds of the weighted base rate, or weighted mean).
    binning_ : BinningScheme
    train_loss_ : ndarray of shape (num_trees + 1,)
        Weighted mean training loss before boosting and after every round.
    """

    def __init__(
        self,
        num_trees=200,
        learning_rate=0.1,
        max_leaves=31,
        min_samples_leaf=20,
        l2_reg=1.0,
        loss="logistic",
        feature_subsample=1.0,
        seed=0,
        max_bins=255,
    ):
        self.num_trees = num_trees
        self.learning_rate = learning_rate
        self.max_leaves = max_leaves
        self.min_samples_leaf = min_samples_leaf
        self.l2_reg = l2_reg
        self.loss = loss
        self.feature_subsample = feature_subsample
        self.seed = seed
        self.max_bins = max_bins

    @property
    def params(self):
        return GbdtParams(**self.get_params())

    @classmethod
    def from_params(cls, params, **overrides):
        return cls(**{**asdict(params), **overrides})

    def fit(self, X, y, sample_weight=None):
        p = self.params.validate()
        X = check_features(X)
        n, d = X.shape
        y = check_target(y, n)
        w = normalize_weights(check_sample_weight(sample_weight, n))

        if p.loss == "logistic":
            if not np.isin(y, (0.0, 1.0)).all():
                raise ParameterError("logistic loss requires a 0/1 target")
            rate = float(np.dot(w, y) / w.sum())
            if rate in (0.0, 1.0):
                raise ParameterError(
                    f"logistic loss needs both classes in the target; all rows are {int(rate)}"
                )
            base = float(np.log(rate / (1.0 - rate)))
        else:
            base = float(np.dot(w, y) / w.sum())

        scheme = BinningScheme.from_data(X, p.max_bins)
        Xb_T = np.ascontiguousarray(scheme.transform(X).T)
        n_bins = scheme.n_bins
        rng = np.random.default_rng(p.seed)
        n_sub = max(1, int(round(p.feature_subsample * d)))

        F = np.full(n, base)
        losses = [_loss_value(p.loss, F, y, w)]
        trees = []
        for _ in range(p.num_trees):
            grad, hess = _loss_grad_hess(p.loss, F, y)
            allowed = np.zeros(d, dtype=bool)
            if n_sub < d:
                allowed[np.sort(rng.choice(d, n_sub, replace=False))] = True
            else:
                allowed[:] = True
            tree, leaf_rows = _TreeGrower(
                Xb_T, n_bins, scheme.cut_points, grad * w, hess * w, w, p, allowed
            ).grow()
            for leaf, rows in leaf_rows:
                F[rows] += p.learning_rate * tree.value[leaf]
            trees.append(tree)
            losses.append(_loss_value(p.loss, F, y, w))

        self.trees_ = trees
        self.base_score_ = base
        self.binning_ = scheme
        self.n_features_in_ = d
        self.train_loss_ = np.array(losses)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "trees_")
        X = check_features(X, self.n_features_in_)
        F = np.full(X.shape[0], self.base_score_)
        for tree in self.trees_:
            F += self.learning_rate * tree.value[tree.apply(X)]
        return F

    def predict(self, X):
        F = self.decision_function(X)
        return expit(F) if self.loss == "logistic" else F

    def to_dict(self):
        check_is_fitted(self, "trees_")
        return {
            "kind": "gbdt",
            "params": asdict(self.params),
            "base_score": self.base_score_,
            "n_features": self.n_features_in_,
            "binning": self.binning_.to_dict(),
            "trees": [t.to_dict() for t in self.trees_],
            "train_loss": self.train_loss_.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("kind") != "gbdt":
            raise ParameterError(f"not a gbdt document (kind={doc.get('kind')!r})")
        model = cls(**doc["params"])
        model.base_score_ = float(doc["base_score"])
        model.n_features_in_ = int(doc["n_features"])
        model.binning_ = BinningScheme.from_dict(doc["binning"])
        model.trees_ = [DecisionTree.from_dict(t) for t in doc["trees"]]
        model.train_loss_ = np.array(doc["train_loss"], dtype=np.float64)
        return model

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def gbdt_fit(X, y, w=None, params=None):
    return GradientBoostedTrees.from_params(params or GbdtParams()).fit(X, y, sample_weight=w)


def gbdt_predict(model, X):
    return model.predict(X)
