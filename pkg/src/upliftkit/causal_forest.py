"""Honest causal forest with percentile-bootstrap confidence intervals.

Each tree draws a subsample without replacement and splits it in two: the
structure half chooses splits, the estimation half fills the leaves with
per-arm outcome means. Splits maximize ``sum_c n_c * tau_c**2`` over the
children, where ``tau_c`` is the structure-half difference in means.
Intervals come from the spread of forests refit on bootstrap resamples.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary, check_both_arms, check_features
from .data import BinningScheme, STRATA, UpliftDataset
from .exceptions import DataError, FitError, ParameterError
from .gbdt import DecisionTree

MIN_CRITERION_GAIN = 1e-12


@dataclass(frozen=True)
class HonestTreeParams:
    num_trees: int = 20
    subsample_fraction: float = 0.5
    honesty_fraction: float = 0.5
    max_leaves: int = 64
    min_treated_leaf: int = 25
    min_control_leaf: int = 25
    max_bins: int = 64
    seed: int = 0

    def validate(self):
        if self.num_trees < 1:
            raise ParameterError(f"num_trees must be at least 1, got {self.num_trees}")
        if not 0 < self.subsample_fraction <= 1:
            raise ParameterError(f"subsample_fraction must lie in (0, 1], got {self.subsample_fraction}")
        if not 0 < self.honesty_fraction < 1:
            raise ParameterError(f"honesty_fraction must lie in (0, 1), got {self.honesty_fraction}")
        if self.max_leaves < 1:
            raise ParameterError(f"max_leaves must be at least 1, got {self.max_leaves}")
        if self.min_treated_leaf < 1 or self.min_control_leaf < 1:
            raise ParameterError("per-arm leaf minimums must be at least 1")
        if not 2 <= self.max_bins <= 255:
            raise ParameterError(f"max_bins must lie in [2, 255], got {self.max_bins}")
        return self


@dataclass(eq=False)
class HonestTree:
    """Tree structure plus estimation-half statistics for every node."""

    structure: DecisionTree
    treated_mean: np.ndarray
    control_mean: np.ndarray
    treated_count: np.ndarray
    control_count: np.ndarray

    @property
    def tau(self):
        return self.treated_mean - self.control_mean

    def predict(self, X):
        return self.tau[self.structure.apply(X)]

    def to_dict(self):
        return {
            "structure": self.structure.to_dict(),
            "treated_mean": self.treated_mean.tolist(),
            "control_mean": self.control_mean.tolist(),
            "treated_count": self.treated_count.tolist(),
            "control_count": self.control_count.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            DecisionTree.from_dict(doc["structure"]),
            np.array(doc["treated_mean"], dtype=np.float64),
            np.array(doc["control_mean"], dtype=np.float64),
            np.array(doc["treated_count"], dtype=np.int64),
            np.array(doc["control_count"], dtype=np.int64),
        )


class _HonestGrower:
    def __init__(self, Xb_T, n_bins, cuts, t, y, struct_rows, est_rows, p):
        self.Xb_T, self.n_bins, self.cuts = Xb_T, n_bins, cuts
        self.t, self.y, self.p = t, y, p
        self.B = int(n_bins.max())
        self.struct_rows, self.est_rows = struct_rows, est_rows
        self.nodes = []  # [feature, bin, threshold, left, right, est_rows]

    def _hist(self, s_rows, e_rows):
        d, B = self.Xb_T.shape[0], self.B
        # structure half: treated n, treated y-sum, all n, all y-sum; estimation half: treated n, all n
        h = np.zeros((6, d, B))
        ts, ys = self.t[s_rows], self.y[s_rows]
        te = self.t[e_rows]
        for j in range(d):
            b = self.Xb_T[j, s_rows]
            h[0, j] = np.bincount(b, weights=ts, minlength=B)
            h[1, j] = np.bincount(b, weights=ts * ys, minlength=B)
            h[2, j] = np.bincount(b, minlength=B)
            h[3, j] = np.bincount(b, weights=ys, minlength=B)
            be = self.Xb_T[j, e_rows]
            h[4, j] = np.bincount(be, weights=te, minlength=B)
            h[5, j] = np.bincount(be, minlength=B)
        return h

    def _best_split(self, h):
        p = self.p
        L = np.cumsum(h, axis=2)[:, :, :-1]
        T = L[:, :, -1:] + h[:, :, -1:]
        R = T - L
        nt_l, yt_l, nc_l, yc_l = L[0], L[1], L[2] - L[0], L[3] - L[1]
        nt_r, yt_r, nc_r, yc_r = R[0], R[1], R[2] - R[0], R[3] - R[1]
        et_l, ec_l = L[4], L[5] - L[4]
        et_r, ec_r = R[4], R[5] - R[4]
        ok = (nt_l >= p.min_treated_leaf) & (nc_l >= p.min_control_leaf)
        ok &= (nt_r >= p.min_treated_leaf) & (nc_r >= p.min_control_leaf)
        ok &= (et_l >= p.min_treated_leaf) & (ec_l >= p.min_control_leaf)
        ok &= (et_r >= p.min_treated_leaf) & (ec_r >= p.min_control_leaf)
        ok &= np.arange(self.B - 1)[None, :] < (self.n_bins[:, None] - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            tau_l = yt_l / nt_l - yc_l / nc_l
            tau_r = yt_r / nt_r - yc_r / nc_r
            nt, yt = T[0], T[1]
            nc, yc = T[2] - T[0], T[3] - T[1]
            tau_p = yt / nt - yc / nc
            gain = (nt_l + nc_l) * tau_l**2 + (nt_r + nc_r) * tau_r**2 - (nt + nc) * tau_p**2
        gain = np.where(ok & np.isfinite(gain), gain, -np.inf)
        k = int(np.argmax(gain))
        B1 = self.B - 1
        return float(gain.flat[k]), k // B1, k % B1

    def grow(self):
        p = self.p
        nodes = self.nodes

        def new_node(s_rows, e_rows, h):
            nid = len(nodes)
            nodes.append([-1, -1, np.nan, -1, -1, e_rows])
            split = self._best_split(h) if p.max_leaves > 1 else (-np.inf, -1, -1)
            return nid, s_rows, e_rows, h, split

        heap = []

        def push(node):
            if node[4][0] > MIN_CRITERION_GAIN:
                heapq.heappush(heap, (-node[4][0], node[0], node))

        push(new_node(self.struct_rows, self.est_rows, self._hist(self.struct_rows, self.est_rows)))
        n_leaves = 1
        while heap and n_leaves < p.max_leaves:
            _, _, (nid, s_rows, e_rows, h, (_, j, b)) = heapq.heappop(heap)
            s_left = self.Xb_T[j, s_rows] <= b
            e_left = self.Xb_T[j, e_rows] <= b
            sl, sr = s_rows[s_left], s_rows[~s_left]
            el, er = e_rows[e_left], e_rows[~e_left]
            if sl.size + el.size <= sr.size + er.size:
                hl = self._hist(sl, el)
                hr = h - hl
            else:
                hr = self._hist(sr, er)
                hl = h - hr
            left = new_node(sl, el, hl)
            right = new_node(sr, er, hr)
            nodes[nid][:5] = [j, b, float(self.cuts[j][b]), left[0], right[0]]
            push(left)
            push(right)
            n_leaves += 1
        return self._finish()

    def _finish(self):
        m = len(self.nodes)
        tm, cm = np.zeros(m), np.zeros(m)
        tc, cc = np.zeros(m, dtype=np.int64), np.zeros(m, dtype=np.int64)
        for i, node in enumerate(self.nodes):
            rows = node[5]
            te = self.t[rows] == 1
            tc[i], cc[i] = te.sum(), (~te).sum()
            ye = self.y[rows]
            tm[i] = ye[te].mean() if tc[i] else np.nan
            cm[i] = ye[~te].mean() if cc[i] else np.nan
        structure = DecisionTree(
            feature=np.array([nd[0] for nd in self.nodes], dtype=np.intp),
            threshold_bin=np.array([nd[1] for nd in self.nodes], dtype=np.intp),
            threshold=np.array([nd[2] for nd in self.nodes], dtype=np.float64),
            left=np.array([nd[3] for nd in self.nodes], dtype=np.intp),
            right=np.array([nd[4] for nd in self.nodes], dtype=np.intp),
            value=tm - cm,
            cover=(tc + cc).astype(np.float64),
            count=tc + cc,
        )
        return HonestTree(structure, tm, cm, tc, cc)


class CausalForest(BaseEstimator):
    """Honest causal forest; ``predict`` averages leaf effects over trees.

    ``groups`` in :meth:`fit` ties rows that are copies of one record (as
    produced by bootstrap resampling), so that subsampling and the
    structure/estimation split act on whole records and no record appears
    on both sides of a tree.

    Attributes
    ----------
    trees_ : list of HonestTree
    degenerate_ : ndarray of bool
        Trees that could not make any valid split (a single leaf holding the
        estimation-half difference in means).
    """

    def __init__(
        self,
        num_trees=20,
        subsample_fraction=0.5,
        honesty_fraction=0.5,
        max_leaves=64,
        min_treated_leaf=25,
        min_control_leaf=25,
        max_bins=64,
        seed=0,
    ):
        self.num_trees = num_trees
        self.subsample_fraction = subsample_fraction
        self.honesty_fraction = honesty_fraction
        self.max_leaves = max_leaves
        self.min_treated_leaf = min_treated_leaf
        self.min_control_leaf = min_control_leaf
        self.max_bins = max_bins
        self.seed = seed

    @property
    def params(self):
        return HonestTreeParams(**self.get_params())

    def tree_halves(self, tree_index, groups):
        """Structure and estimation row indices used by tree ``tree_index``.

        Deterministic in (seed, tree_index), independent of how many trees are grown.
        """
        p = self.params
        uniq, inverse = np.unique(groups, return_inverse=True)
        rng = np.random.default_rng([p.seed, tree_index])
        m = max(2, int(np.ceil(p.subsample_fraction * uniq.size)))
        chosen = rng.choice(uniq.size, size=m, replace=False)
        n_struct = int(round(p.honesty_fraction * m))
        side = np.full(uniq.size, -1, dtype=np.int8)
        side[chosen[:n_struct]] = 0
        side[chosen[n_struct:]] = 1
        row_side = side[inverse]
        return np.flatnonzero(row_side == 0), np.flatnonzero(row_side == 1)

    def fit(self, X, treatment, y, groups=None):
        p = self.params.validate()
        X = check_features(X)
        n = X.shape[0]
        t = check_binary(treatment, "treatment", n).astype(np.float64)
        y = check_binary(y, "y", n).astype(np.float64)
        check_both_arms(t.astype(np.int8))
        if n < 4 * (p.min_treated_leaf + p.min_control_leaf):
            raise FitError(
                f"causal forest needs at least {4 * (p.min_treated_leaf + p.min_control_leaf)} rows, got {n}"
            )
        groups = np.arange(n) if groups is None else np.asarray(groups)
        scheme = BinningScheme.from_data(X, p.max_bins)
        Xb_T = np.ascontiguousarray(scheme.transform(X).T)
        trees = []
        for b in range(p.num_trees):
            s_rows, e_rows = self.tree_halves(b, groups)
            trees.append(_HonestGrower(Xb_T, scheme.n_bins, scheme.cut_points, t, y, s_rows, e_rows, p).grow())
        self.trees_ = trees
        self.binning_ = scheme
        self.n_features_in_ = X.shape[1]
        self.degenerate_ = np.array([tr.structure.n_nodes == 1 for tr in trees])
        # a single leaf with an empty arm has no effect estimate
        bad = [i for i, tr in enumerate(trees) if not np.isfinite(tr.tau[0])]
        if bad:
            raise FitError(f"estimation half of tree {bad[0]} lacks one treatment arm")
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_features(X, self.n_features_in_)
        out = np.zeros(X.shape[0])
        for tree in self.trees_:
            out += tree.predict(X)
        return out / len(self.trees_)

    def to_dict(self):
        check_is_fitted(self, "trees_")
        return {
            "kind": "causal_forest",
            "params": asdict(self.params),
            "n_features": self.n_features_in_,
            "binning": self.binning_.to_dict(),
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("kind") != "causal_forest":
            raise ParameterError(f"not a causal_forest document (kind={doc.get('kind')!r})")
        m = cls(**doc["params"])
        m.n_features_in_ = int(doc["n_features"])
        m.binning_ = BinningScheme.from_dict(doc["binning"])
        m.trees_ = [HonestTree.from_dict(t) for t in doc["trees"]]
        m.degenerate_ = np.array([tr.structure.n_nodes == 1 for tr in m.trees_])
        return m


@dataclass(frozen=True, eq=False)
class CateInterval:
    """Per-record point estimates with 95% bounds (arrays of equal length)."""

    tau_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95

    def __len__(self):
        return self.tau_hat.size

    def to_rows(self):
        return list(zip(self.tau_hat.tolist(), self.lower.tolist(), self.upper.tolist()))


class BootstrapCausalForest(BaseEstimator):
    """Forest replicates refit on bootstrap resamples.

    The point estimate is the mean of the replicate predictions; the bounds
    are their 2.5th and 97.5th percentiles. Fewer than 20 replicates is
    rejected.
    """

    MIN_REPLICATES = 20

    def __init__(
        self,
        n_replicates=50,
        num_trees=20,
        subsample_fraction=0.5,
        honesty_fraction=0.5,
        max_leaves=64,
        min_treated_leaf=25,
        min_control_leaf=25,
        max_bins=64,
        seed=0,
    ):
        self.n_replicates = n_replicates
        self.num_trees = num_trees
        self.subsample_fraction = subsample_fraction
        self.honesty_fraction = honesty_fraction
        self.max_leaves = max_leaves
        self.min_treated_leaf = min_treated_leaf
        self.min_control_leaf = min_control_leaf
        self.max_bins = max_bins
        self.seed = seed

    def _forest_params(self):
        params = self.get_params()
        del params["n_replicates"]
        return params

    def fit(self, X, treatment, y):
        if self.n_replicates < self.MIN_REPLICATES:
            raise ParameterError(
                f"n_replicates must be at least {self.MIN_REPLICATES}, got {self.n_replicates}"
            )
        X = check_features(X)
        n = X.shape[0]
        t = check_binary(treatment, "treatment", n)
        y = check_binary(y, "y", n)
        check_both_arms(t)
        forests = []
        for r in range(self.n_replicates):
            rng = np.random.default_rng([self.seed, 1_000_003, r])
            idx = np.sort(rng.integers(0, n, size=n))
            params = {**self._forest_params(), "seed": int(rng.integers(2**31))}
            forests.append(CausalForest(**params).fit(X[idx], t[idx], y[idx], groups=idx))
        self.forests_ = forests
        self.n_features_in_ = X.shape[1]
        return self

    def replicate_predictions(self, X):
        check_is_fitted(self, "forests_")
        X = check_features(X, self.n_features_in_)
        return np.vstack([f.predict(X) for f in self.forests_])

    def predict_interval(self, X):
        return interval_from_replicates(self.replicate_predictions(X))

    def predict(self, X):
        return self.replicate_predictions(X).mean(axis=0)

    def to_dict(self):
        return {
            "kind": "bootstrap_causal_forest",
            "n_replicates": self.n_replicates,
            "forests": [f.to_dict() for f in self.forests_],
        }

    @classmethod
    def from_dict(cls, doc):
        forests = [CausalForest.from_dict(f) for f in doc["forests"]]
        m = cls(n_replicates=doc["n_replicates"], **{k: v for k, v in forests[0].get_params().items()})
        m.forests_ = forests
        m.n_features_in_ = forests[0].n_features_in_
        return m


def interval_from_replicates(preds):
    """Percentile interval over rows of ``preds`` (replicates x records)."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape[0] < BootstrapCausalForest.MIN_REPLICATES:
        raise ParameterError(
            f"need at least {BootstrapCausalForest.MIN_REPLICATES} replicates, got {preds.shape[0]}"
        )
    tau = preds.mean(axis=0)
    # the float mean of equal values can be off by an ulp; keep them exact
    same = np.all(preds == preds[0], axis=0)
    tau[same] = preds[0, same]
    lo, hi = np.percentile(preds, [2.5, 97.5], axis=0)
    # the replicate mean can fall outside the percentile band for skewed replicates
    return CateInterval(tau, np.minimum(lo, tau), np.maximum(hi, tau))


def cf_subsample(ds, fraction, seed):
    """Proportional sample of every (treatment, outcome) stratum."""
    if not 0 < fraction <= 1:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return ds
    rng = np.random.default_rng(seed)
    keep = []
    for stratum, members in ds.strata().items():
        k = int(round(fraction * members.size))
        if members.size and k == 0:
            raise DataError(
                f"stratum (treatment={stratum[0]}, outcome={stratum[1]}) is empty after sampling "
                f"{fraction:g} of its {members.size} members"
            )
        keep.append(rng.choice(members, size=k, replace=False))
    return ds.take(np.sort(np.concatenate(keep)))


def cf_fit(ds, params=None):
    return CausalForest(**asdict(params or HonestTreeParams())).fit(ds.features, ds.treatment, ds.outcome)


def to_json(model):
    return json.dumps(model.to_dict())
