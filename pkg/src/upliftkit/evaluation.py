"""Uplift evaluation: cumulative gain curves, the Qini coefficient,
capture rates, policy simulation and interval-based segmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_binary
from .exceptions import EvaluationError, ParameterError

TIE_POLICIES = ("shuffle", "average")


@dataclass(frozen=True, eq=False)
class GainCurve:
    """Share G(phi) of all incremental conversions captured by treating the
    top ``phi`` fraction of records ranked by descending score.

    ``imputed`` marks grid points whose top-k held only one arm; their value
    is interpolated from the neighbouring points.
    """

    phi: np.ndarray
    gain: np.ndarray
    total_incremental: float
    imputed: np.ndarray
    tie_policy: str = "shuffle"
    tie_seed: int | None = 0

    def to_rows(self):
        return list(zip(self.phi.tolist(), self.gain.tolist()))


@dataclass(frozen=True, eq=False)
class QiniResult:
    qini: float
    curve: GainCurve
    model_id: str | None = None


def _cumulative(order, t, y):
    t = t[order].astype(np.float64)
    y = y[order].astype(np.float64)
    cols = np.column_stack([t, t * y, 1.0 - t, (1.0 - t) * y])
    return np.vstack([np.zeros((1, 4)), np.cumsum(cols, axis=0)])


def gain_curve(scores, treatment, outcome, grid_size=100, tie_policy="shuffle", seed=0):
    """Cumulative incremental-gain curve on the grid ``phi = i / grid_size``.

    For the top ``k = ceil(phi * n)`` records, incremental conversions are
    ``(mean_y_treated - mean_y_control) * k``; G is that divided by the same
    quantity over all ``n`` records.

    Ties in ``scores`` are broken by a shuffle seeded with ``seed``
    (``tie_policy="shuffle"``) or averaged over each tie block
    (``tie_policy="average"``), which takes the expected cumulative counts
    under a uniformly random order within the block.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or not np.all(np.isfinite(scores)):
        raise ParameterError("scores must be a finite one-dimensional vector")
    n = scores.size
    t = check_binary(treatment, "treatment", n)
    y = check_binary(outcome, "outcome", n)
    if grid_size < 10:
        raise ParameterError(f"grid_size must be at least 10, got {grid_size}")
    if tie_policy not in TIE_POLICIES:
        raise ParameterError(f"tie_policy must be one of {TIE_POLICIES}, got {tie_policy!r}")
    n1 = int(t.sum())
    if n1 == 0 or n1 == n:
        raise EvaluationError("gain curve needs both treatment arms")

    if tie_policy == "shuffle":
        perm = np.random.default_rng(seed).permutation(n)
        order = perm[np.argsort(-scores[perm], kind="stable")]
        knots = np.arange(n + 1)
        cum = _cumulative(order, t, y)
    else:
        order = np.argsort(-scores, kind="stable")
        s = scores[order]
        knots = np.concatenate([[0], np.flatnonzero(s[1:] != s[:-1]) + 1, [n]])
        cum = _cumulative(order, t, y)[knots]

    total = cum[-1]
    inc_total = (total[1] / total[0] - total[3] / total[2]) * n
    if not inc_total > 0:
        raise EvaluationError(
            f"total incremental conversions are {inc_total:.6g}; the gain curve is undefined "
            "unless the treated outcome rate exceeds the control rate"
        )

    i = np.arange(grid_size + 1)
    k = -(-i * n // grid_size)
    phi = i / grid_size
    at = np.column_stack([np.interp(k, knots, cum[:, c]) for c in range(4)])
    nt, yt, nc, yc = at.T
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = (yt / nt - yc / nc) * k
    valid = (nt > 0) & (nc > 0)
    valid[0] = True
    inc[0] = 0.0
    gain = inc / inc_total
    imputed = ~valid
    if imputed.any():
        gain[imputed] = np.interp(phi[imputed], phi[valid], gain[valid])
    gain[-1] = 1.0
    return GainCurve(
        phi, gain, float(inc_total), imputed, tie_policy, seed if tie_policy == "shuffle" else None
    )


def qini(curve, model_id=None):
    """Trapezoidal area between the gain curve and the random-targeting line."""
    excess = curve.gain - curve.phi * curve.gain[-1]
    return QiniResult(float(np.trapezoid(excess, curve.phi)), curve, model_id)


def capture_at(curve, phi):
    """Linear interpolation of G at ``phi``."""
    if not 0.0 <= phi <= 1.0:
        raise ParameterError(f"phi must lie in [0, 1], got {phi}")
    return float(np.interp(phi, curve.phi, curve.gain))


@dataclass(frozen=True)
class PolicyRow:
    strategy: str
    fraction: float
    contacts: int
    captured: float
    efficiency: float
    spend: float

    @property
    def efficiency_label(self):
        return f"{self.efficiency:.1f}x"

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "fraction": self.fraction,
            "contacts": self.contacts,
            "captured": self.captured,
            "efficiency": self.efficiency,
            "efficiency_label": self.efficiency_label,
            "spend": self.spend,
        }


@dataclass(frozen=True)
class PolicyReport:
    population: int
    cost_per_contact: float
    rows: tuple = field(default_factory=tuple)

    def to_dict(self):
        return {
            "population": self.population,
            "cost_per_contact": self.cost_per_contact,
            "rows": [r.to_dict() for r in self.rows],
        }


def policy_simulate(curve, population, cost_per_contact=1.0, fractions=(0.2,), label="model"):
    """Budget vs. captured-uplift table for targeting the top ``fractions``.

    Emits the untargeted row first, then for every fraction a model-targeted
    row and a random-targeting row (which captures exactly its fraction).
    """
    if population < 1:
        raise ParameterError(f"population must be at least 1, got {population}")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ParameterError(f"policy fractions must lie in (0, 1], got {f}")

    def row(strategy, f, captured):
        contacts = int(round(f * population))
        return PolicyRow(strategy, f, contacts, captured, captured / f, contacts * cost_per_contact)

    rows = [row("Untargeted (100%)", 1.0, capture_at(curve, 1.0))]
    for f in fractions:
        pct = f"{100 * f:g}%"
        rows.append(row(f"Top {pct} {label}", f, capture_at(curve, f)))
        rows.append(row(f"Random {pct}", f, f))
    return PolicyReport(population, cost_per_contact, tuple(rows))


@dataclass(frozen=True)
class SegmentCounts:
    persuadable: int
    sleeping_dog: int
    uncertain: int

    @property
    def n(self):
        return self.persuadable + self.sleeping_dog + self.uncertain

    def shares(self):
        n = self.n
        return {
            "persuadable": self.persuadable / n,
            "sleeping_dog": self.sleeping_dog / n,
            "uncertain": self.uncertain / n,
        }

    def to_dict(self):
        return {
            "counts": {
                "persuadable": self.persuadable,
                "sleeping_dog": self.sleeping_dog,
                "uncertain": self.uncertain,
            },
            "shares": self.shares(),
        }


def segment_by_interval(intervals):
    """Persuadable when the lower bound is above zero, sleeping dog when the
    upper bound is below zero, uncertain otherwise.

    ``intervals`` is anything with ``lower`` and ``upper`` arrays, or an
    iterable of objects that each have scalar ``lower``/``upper``.
    """
    if hasattr(intervals, "lower"):
        lower = np.asarray(intervals.lower, dtype=np.float64)
        upper = np.asarray(intervals.upper, dtype=np.float64)
    else:
        items = list(intervals)
        lower = np.array([iv.lower for iv in items], dtype=np.float64)
        upper = np.array([iv.upper for iv in items], dtype=np.float64)
    pers = int(np.count_nonzero(lower > 0))
    dogs = int(np.count_nonzero(upper < 0))
    return SegmentCounts(pers, dogs, lower.size - pers - dogs)
