"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DomainError, ParameterError


def check_features(X, n_features=None, name="X"):
    """Return ``X`` as a finite 2-D float64 array.

    Raises ParameterError when ``n_features`` is given and does not match.
    """
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    except ValueError as exc:
        raise ParameterError(f"{name}: {exc}") from exc
    if n_features is not None and X.shape[1] != n_features:
        raise ParameterError(
            f"{name} has {X.shape[1]} features, but the model was fitted with {n_features}"
        )
    return X


def check_binary(v, name, n=None):
    v = np.asarray(v)
    if v.ndim != 1:
        raise ParameterError(f"{name} must be one-dimensional, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise ParameterError(f"{name} has {v.shape[0]} entries, expected {n}")
    bad = ~np.isin(v, (0, 1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"{name} must contain only 0 or 1; found {v[i]!r} at index {i}")
    return v.astype(np.int8)


def check_target(y, n, name="y"):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != n:
        raise ParameterError(f"{name} must be a vector of length {n}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ParameterError(f"{name} contains non-finite values")
    return y


def check_sample_weight(w, n):
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != n:
        raise ParameterError(f"sample_weight must have length {n}, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or (w < 0).any():
        raise ParameterError("sample_weight must be finite and non-negative")
    if w.sum() <= 0:
        raise ParameterError("sample_weight must have a positive sum")
    return w


def check_both_arms(treatment, what="fit"):
    n1 = int(np.count_nonzero(treatment))
    n0 = treatment.shape[0] - n1
    if n1 == 0 or n0 == 0:
        from .exceptions import FitError

        raise FitError(f"cannot {what}: both treatment arms must be present (treated={n1}, control={n0})")
    return n0, n1
