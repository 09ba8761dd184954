"""Synthetic randomized experiments with known treatment effects.

Features are i.i.d. uniform on the unit hypercube, treatment is assigned by a
coin flip independent of the features, and the outcome is drawn from
``Bernoulli(p0(x) + t * tau(x))``. Every function registered here is affine
in the features, so validity of the outcome probabilities is checked exactly
on the corners of the hypercube.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .data import UpliftDataset
from .exceptions import ConfigError

# tau functions: name -> (f(X) -> tau, features used)
_TAU = {
    "zero": (lambda X: np.zeros(X.shape[0]), ()),
    "linear": (lambda X: 0.01 + 0.02 * X[:, 0] + 0.01 * X[:, 1], (0, 1)),
    "f8dom": (lambda X: 0.06 * X[:, 8], (8,)),
    "signflip": (lambda X: 0.04 * (X[:, 0] - 0.5), (0,)),
}


def _const(name):
    try:
        v = float(name.split(":", 1)[1])
    except (IndexError, ValueError):
        raise ConfigError(f"bad constant function id {name!r}; expected 'const:<value>'") from None
    return (lambda X: np.full(X.shape[0], v)), ()


def resolve_function(name):
    """Return ``(callable, driving_feature_indices)`` for a function id."""
    if name.startswith("const:"):
        return _const(name)
    try:
        return _TAU[name]
    except KeyError:
        raise ConfigError(f"unknown function id {name!r}") from None


@dataclass(frozen=True)
class DgpSpec:
    n: int
    d: int = 12
    treatment_share: float = 0.5
    base_rate_fn: str = "const:0.05"
    tau_fn: str = "zero"
    seed: int = 0

    def validate(self):
        if self.n < 2:
            raise ConfigError(f"n must be at least 2, got {self.n}")
        if not 0 < self.treatment_share < 1:
            raise ConfigError(f"treatment_share must lie in (0, 1), got {self.treatment_share}")
        base, base_feats = resolve_function(self.base_rate_fn)
        tau, tau_feats = resolve_function(self.tau_fn)
        used = sorted(set(base_feats) | set(tau_feats))
        if used and used[-1] >= self.d:
            raise ConfigError(f"{self.tau_fn!r} needs at least {used[-1] + 1} features, d={self.d}")
        corners = np.zeros((2 ** len(used), self.d))
        for r, bits in enumerate(itertools.product((0.0, 1.0), repeat=len(used))):
            corners[r, used] = bits
        _check_probabilities(base(corners), base(corners) + tau(corners), "feature support")
        return self


def _check_probabilities(p0, p1, where):
    for label, p in (("base rate", p0), ("treated rate", p1)):
        if not np.all((p > 0) & (p < 1)):
            raise ConfigError(f"{label} leaves (0, 1) on the {where}: range [{p.min():g}, {p.max():g}]")


PRESETS = {
    "NULL": dict(treatment_share=0.5, base_rate_fn="const:0.05", tau_fn="zero"),
    "CONSTANT": dict(treatment_share=0.5, base_rate_fn="const:0.05", tau_fn="const:0.02"),
    "LINEAR": dict(treatment_share=0.5, base_rate_fn="const:0.05", tau_fn="linear"),
    "F8DOM": dict(treatment_share=0.85, base_rate_fn="const:0.04", tau_fn="f8dom"),
    "SIGNFLIP": dict(treatment_share=0.5, base_rate_fn="const:0.05", tau_fn="signflip"),
}


def preset(name, n, seed=0, **overrides):
    """Build the :class:`DgpSpec` for a named preset."""
    try:
        kw = dict(PRESETS[name.upper()])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(DgpSpec(n=n, seed=seed, **kw), **overrides)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    tau: np.ndarray
    p0: np.ndarray
    p1: np.ndarray


def true_tau(spec, X):
    tau, _ = resolve_function(spec.tau_fn)
    return tau(np.asarray(X, dtype=np.float64))


def generate_dgp(spec):
    """Draw a dataset and its ground truth; identical output for identical specs."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    X = rng.random((spec.n, spec.d))
    t = (rng.random(spec.n) < spec.treatment_share).astype(np.int8)
    u = rng.random(spec.n)
    base, _ = resolve_function(spec.base_rate_fn)
    tau, _ = resolve_function(spec.tau_fn)
    p0 = base(X)
    p1 = p0 + tau(X)
    _check_probabilities(p0, p1, "sampled records")
    y = np.where(t == 1, u < p1, u < p0).astype(np.int8)
    ds = UpliftDataset(X, tuple(f"f{j}" for j in range(spec.d)), t, y)
    truth = GroundTruth(p1 - p0, p0, p1)
    for a in (truth.tau, truth.p0, truth.p1):
        a.setflags(write=False)
    return ds, truth


def write_ground_truth(truth, path):
    np.savetxt(
        path,
        np.column_stack([truth.tau, truth.p0, truth.p1]),
        fmt="%.17g",
        delimiter=",",
        header="tau,p0,p1",
        comments="",
    )
