"""Tabular plumbing: the dataset container, CSV ingestion, stratified
splitting, z-score standardization and quantile binning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary, check_features
from .exceptions import DataError, DomainError, ParameterError, ParseError, SchemaError, StratificationError

DEFAULT_FEATURES = tuple(f"f{i}" for i in range(12))
STRATA = ((0, 0), (0, 1), (1, 0), (1, 1))


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class UpliftDataset:
    """Feature matrix plus treatment indicator and binary outcome.

    ``features`` is stored column-major with shape ``(n, d)``. All arrays are
    read-only once constructed.
    """

    features: np.ndarray
    feature_names: tuple
    treatment: np.ndarray
    outcome: np.ndarray
    propensity: np.ndarray | None = None

    def __post_init__(self):
        X = np.asfortranarray(check_features(self.features, name="features"))
        n, d = X.shape
        if n < 2:
            raise ParameterError(f"a dataset needs at least 2 rows, got {n}")
        names = tuple(self.feature_names)
        if len(names) != d:
            raise ParameterError(f"{len(names)} feature names for {d} feature columns")
        t = check_binary(self.treatment, "treatment", n)
        y = check_binary(self.outcome, "outcome", n)
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "treatment", _frozen(t))
        object.__setattr__(self, "outcome", _frozen(y))
        if self.propensity is not None:
            e = np.asarray(self.propensity, dtype=np.float64)
            if e.shape != (n,):
                raise ParameterError(f"propensity must have length {n}, got shape {e.shape}")
            if not np.all((e > 0) & (e < 1)):
                raise DomainError("propensity values must lie strictly inside (0, 1)")
            object.__setattr__(self, "propensity", _frozen(e))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def take(self, indices):
        idx = np.asarray(indices)
        return UpliftDataset(
            self.features[idx],
            self.feature_names,
            self.treatment[idx],
            self.outcome[idx],
            None if self.propensity is None else self.propensity[idx],
        )

    def with_features(self, features, feature_names=None):
        return UpliftDataset(
            features,
            self.feature_names if feature_names is None else feature_names,
            self.treatment,
            self.outcome,
            self.propensity,
        )

    def drop_feature(self, name):
        j = self.feature_names.index(name)
        keep = [i for i in range(self.d) if i != j]
        return self.with_features(self.features[:, keep], [self.feature_names[i] for i in keep])

    def strata(self):
        """Index arrays for each (treatment, outcome) pair, in a fixed order."""
        key = 2 * self.treatment.astype(np.int64) + self.outcome
        return {s: np.flatnonzero(key == 2 * s[0] + s[1]) for s in STRATA}


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for the input CSV (f0..f11, treatment, visit, conversion,
    exposure by default). Extra columns are ignored."""

    features: tuple = DEFAULT_FEATURES
    treatment: str = "treatment"
    visit: str = "visit"
    conversion: str = "conversion"
    exposure: str = "exposure"
    propensity: str | None = None

    def outcome_column(self, outcome):
        if outcome not in ("visit", "conversion"):
            raise ParameterError(f"outcome must be 'visit' or 'conversion', got {outcome!r}")
        return getattr(self, outcome)


def _parse(value, row, column):
    try:
        v = float(value)
    except ValueError:
        raise ParseError(row, column, value) from None
    if not math.isfinite(v):
        raise ParseError(row, column, value)
    return v


def load_csv(path, schema=None, outcome="visit"):
    """Read a header-first CSV into an :class:`UpliftDataset`.

    Row numbers in error messages count data rows from 1 (the header is not
    counted). Row order is preserved.
    """
    schema = schema or CsvSchema()
    ycol = schema.outcome_column(outcome)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(None, f"{path}: empty file, header row required") from None
        pos = {name: i for i, name in enumerate(header)}
        wanted = list(schema.features) + [schema.treatment, ycol]
        if schema.propensity:
            wanted.append(schema.propensity)
        for col in wanted:
            if col not in pos:
                raise SchemaError(col)
        cols = [pos[c] for c in wanted]
        rows = []
        for r, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) < len(header):
                raise ParseError(r, header[len(record)], "")
            rows.append([_parse(record[c], r, header[c]) for c in cols])
    if not rows:
        raise DomainError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    d = len(schema.features)
    for j, name in ((d, schema.treatment), (d + 1, ycol)):
        bad = ~np.isin(data[:, j], (0.0, 1.0))
        if bad.any():
            r = int(np.flatnonzero(bad)[0]) + 1
            raise DomainError(
                f"row {r}, column {name!r}: value {data[r - 1, j]:g} is outside {{0, 1}}",
                row=r,
                column=name,
            )
    propensity = data[:, d + 2] if schema.propensity else None
    return UpliftDataset(
        data[:, :d], tuple(schema.features), data[:, d], data[:, d + 1], propensity
    )


def write_csv(ds, path, outcome_column="visit", treatment_column="treatment"):
    """Write ``ds`` in the same layout :func:`load_csv` reads.

    Reals use 17 significant digits, so a write/read cycle is lossless.
    """
    cols = [ds.features[:, j] for j in range(ds.d)] + [ds.treatment, ds.outcome]
    header = list(ds.feature_names) + [treatment_column, outcome_column]
    fmt = ["%.17g"] * ds.d + ["%d", "%d"]
    if ds.propensity is not None:
        cols.append(ds.propensity)
        header.append("propensity")
        fmt.append("%.17g")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.column_stack(cols), fmt=fmt, delimiter=",", header=",".join(header), comments="")


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray


def stratified_split(ds, test_fraction, seed):
    """Split rows so every (treatment, outcome) stratum keeps ``test_fraction``
    of its members in the test set, up to rounding."""
    if not 0 < test_fraction < 1:
        raise ParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for stratum, members in ds.strata().items():
        if members.size < 2:
            raise StratificationError(stratum, members.size)
        k = min(max(int(round(test_fraction * members.size)), 1), members.size - 1)
        perm = rng.permutation(members)
        test.append(perm[:k])
        train.append(perm[k:])
    return SplitIndices(_frozen(np.sort(np.concatenate(train))), _frozen(np.sort(np.concatenate(test))))


@dataclass(frozen=True)
class StandardizationParams:
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        scale = np.where(self.constant, 1.0, self.stds)
        shift = np.where(self.constant, 0.0, self.means)
        return (X - shift) / scale

    def inverse_transform(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        scale = np.where(self.constant, 1.0, self.stds)
        shift = np.where(self.constant, 0.0, self.means)
        return Z * scale + shift


class Standardizer(TransformerMixin, BaseEstimator):
    """Z-score scaling with population (divide-by-n) standard deviations.

    Constant columns are flagged in ``constant_`` and passed through unchanged.
    """

    def fit(self, X, y=None):
        X = check_features(X)
        means = X.mean(axis=0)
        stds = X.std(axis=0)
        constant = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
        self.params_ = StandardizationParams(_frozen(means), _frozen(stds), _frozen(constant))
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def constant_(self):
        check_is_fitted(self, "params_")
        return self.params_.constant

    def transform(self, X):
        check_is_fitted(self, "params_")
        return self.params_.transform(check_features(X, self.n_features_in_))

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return self.params_.inverse_transform(check_features(X, self.n_features_in_))


def standardize(ds, fit_on):
    """Fit scaling on the rows ``fit_on`` and apply it to every row of ``ds``."""
    fit_on = np.asarray(fit_on)
    if fit_on.size < 2:
        raise ParameterError("standardization needs at least 2 training rows")
    scaler = Standardizer().fit(ds.features[fit_on])
    return scaler.params_, ds.with_features(scaler.transform(ds.features))


@dataclass(frozen=True, eq=False)
class BinningScheme:
    """Per-feature cut points. A value ``x`` lands in bin ``#(cuts < x)``, so
    bin ``b`` holds values in ``(cuts[b-1], cuts[b]]``."""

    cut_points: tuple
    representatives: tuple = field(repr=False)
    lossless: np.ndarray = field(repr=False)

    @property
    def n_bins(self):
        return np.array([c.size + 1 for c in self.cut_points])

    @classmethod
    def from_data(cls, X, max_bins=255):
        if not 2 <= max_bins <= 255:
            raise ParameterError(f"max_bins must lie in [2, 255], got {max_bins}")
        X = check_features(X)
        cuts, reps, lossless = [], [], []
        for j in range(X.shape[1]):
            col = X[:, j]
            distinct = np.unique(col)
            if distinct.size <= max_bins:
                c = distinct[:-1]
                r = distinct
                lossless.append(True)
            else:
                q = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1])
                c = np.unique(q)
                c = c[c < distinct[-1]]
                b = np.searchsorted(c, col, side="left")
                # median of the training values in each bin, used for inverse mapping
                r = np.array([np.median(col[b == k]) for k in range(c.size + 1)])
                lossless.append(False)
            cuts.append(_frozen(c))
            reps.append(_frozen(r))
        return cls(tuple(cuts), tuple(reps), _frozen(lossless))

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape, dtype=np.uint8)
        for j, c in enumerate(self.cut_points):
            out[:, j] = np.searchsorted(c, X[:, j], side="left")
        return out

    def inverse_transform(self, B):
        B = np.asarray(B)
        return np.column_stack([self.representatives[j][B[:, j]] for j in range(B.shape[1])])

    def to_dict(self):
        return {
            "cut_points": [c.tolist() for c in self.cut_points],
            "representatives": [r.tolist() for r in self.representatives],
            "lossless": self.lossless.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            tuple(_frozen(np.array(c, dtype=np.float64)) for c in doc["cut_points"]),
            tuple(_frozen(np.array(r, dtype=np.float64)) for r in doc["representatives"]),
            _frozen(np.array(doc["lossless"], dtype=bool)),
        )


class QuantileBinner(TransformerMixin, BaseEstimator):
    """Map each feature onto at most ``max_bins`` ordinal bins (uint8 codes)."""

    def __init__(self, max_bins=255):
        self.max_bins = max_bins

    def fit(self, X, y=None):
        X = check_features(X)
        self.scheme_ = BinningScheme.from_data(X, self.max_bins)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scheme_")
        return self.scheme_.transform(check_features(X, self.n_features_in_))

    def inverse_transform(self, B):
        check_is_fitted(self, "scheme_")
        return self.scheme_.inverse_transform(B)


def quantile_bin(ds, max_bins=255):
    return BinningScheme.from_data(ds.features, max_bins)
