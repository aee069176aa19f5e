"""Inequality functionals and their weighted plug-in estimators.

All functions accept plain sequences. Weighted versions treat a weight
``w_k`` as the number of population units represented by unit ``k``, so
integer weights reproduce the population functional on the expanded
population exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

# Cumulative-mass slack when inverting the weighted CDF; keeps p * W from
# skipping a step because of rounding (0.9 * 100 != 90 in binary).
_CDF_TOL = 1e-12


class DegenerateSampleError(ValueError):
    """Raised when a functional is undefined on the supplied values."""


@dataclass(frozen=True)
class WeightedSample:
    """Values ``t_k`` with positive design weights ``w_k``."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if t.shape != w.shape:
            raise ValueError(f"values and weights differ in length ({t.size} vs {w.size})")
        if t.size == 0:
            raise ValueError("empty sample")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise ValueError("values must be finite and nonnegative")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and positive")
        object.__setattr__(self, "values", t)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unweighted(cls, values) -> "WeightedSample":
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones_like(values))

    def __len__(self):
        return self.values.size


def _as_sample(t, weights=None) -> WeightedSample:
    if isinstance(t, WeightedSample):
        return t
    if weights is None:
        return WeightedSample.unweighted(t)
    return WeightedSample(t, weights)


def _require_positive(t, what):
    if np.any(t <= 0):
        raise DegenerateSampleError(f"{what} requires positive wealth")


def gini_population(t) -> float:
    """Gini index of a finite population.

    Ranks are positions in a stable sort, so tied units receive distinct
    consecutive ranks and an equal distribution scores exactly zero.
    """
    return gini_weighted(WeightedSample.unweighted(t))


def gini_weighted(sample, weights=None) -> float:
    """Design-based Gini estimate from weighted values.

    Uses the cumulative weight ``R_k`` in stable-sorted order and the
    numerator ``sum_k (2 R_k - w_k) w_k t_k``, which reduces to the rank
    form ``(2 r(k) - 1)`` for unit weights and matches the Gini of the
    weight-expanded population for integer weights.
    """
    s = _as_sample(sample, weights)
    order = np.argsort(s.values, kind="stable")
    t, w = s.values[order], s.weights[order]
    total_w = w.sum()
    total_t = np.dot(w, t)
    if total_t <= 0:
        raise DegenerateSampleError("degenerate population: total wealth is zero")
    cum = np.cumsum(w)
    return float(np.dot((2.0 * cum - w) * w, t) / (total_w * total_t) - 1.0)


def gini_pairwise(t, weights=None) -> float:
    """Gini as a weighted mean absolute difference, O(n^2); an oracle."""
    s = _as_sample(t, weights)
    t, w = s.values, s.weights
    mean = np.dot(w, t) / w.sum()
    if mean <= 0:
        raise DegenerateSampleError("degenerate population: total wealth is zero")
    diff = np.abs(t[:, None] - t[None, :])
    return float(w @ diff @ w / (2.0 * w.sum() ** 2 * mean))


def atkinson(t, epsilon: float, weights=None) -> float:
    """Atkinson index with inequality aversion ``epsilon > 0``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    s = _as_sample(t, weights)
    _require_positive(s.values, "Atkinson")
    w = s.weights / s.weights.sum()
    mean = np.dot(w, s.values)
    rel = s.values / mean
    if epsilon == 1.0:
        # mean of logs, then exp: the product form overflows
        return float(1.0 - np.exp(np.dot(w, np.log(rel))))
    e = 1.0 - epsilon
    return float(1.0 - np.dot(w, rel**e) ** (1.0 / e))


def theil(t, weights=None) -> float:
    """Theil entropy index ``mean((t/tbar) log(t/tbar))``."""
    s = _as_sample(t, weights)
    _require_positive(s.values, "Theil")
    w = s.weights / s.weights.sum()
    rel = s.values / np.dot(w, s.values)
    return float(np.dot(w, rel * np.log(rel)))


def weighted_mean(t, weights=None) -> float:
    s = _as_sample(t, weights)
    return float(np.dot(s.weights, s.values) / s.weights.sum())


def weighted_quantile(sample, p: float, weights=None) -> float:
    """Left-continuous inverse of the weighted CDF.

    Returns the smallest value ``t`` with cumulative normalized weight
    ``F(t) >= p``.
    """
    if not 0 < p < 1:
        raise ValueError(f"p must be in (0, 1), got {p}")
    s = _as_sample(sample, weights)
    order = np.argsort(s.values, kind="stable")
    cum = np.cumsum(s.weights[order])
    return float(s.values[order][_quantile_position(cum, p)])


def _quantile_position(cum, p):
    idx = np.searchsorted(cum / cum[-1], p - _CDF_TOL, side="left")
    return min(int(idx), cum.size - 1)


_KINDS = ("mean", "median", "quantile", "ratio", "gini", "theil", "atkinson")


@dataclass(frozen=True)
class SummarySpec:
    """A finite-population summary to estimate.

    ``kind`` is one of ``mean, median, quantile, ratio, gini, theil,
    atkinson``; ``p``/``q`` are the quantile levels (ratio = Q(p)/Q(q)) and
    ``epsilon`` the Atkinson aversion.
    """

    kind: str
    p: Optional[float] = None
    q: Optional[float] = None
    epsilon: Optional[float] = None
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown summary kind {self.kind!r}")
        if self.kind == "median":
            object.__setattr__(self, "p", 0.5)
        if self.kind in ("quantile", "median", "ratio"):
            if self.p is None or not 0 < self.p < 1:
                raise ValueError(f"{self.kind}: p must be in (0, 1)")
        if self.kind == "ratio" and (self.q is None or not 0 < self.q < 1):
            raise ValueError("ratio: q must be in (0, 1)")
        if self.kind == "atkinson" and (self.epsilon is None or not self.epsilon > 0):
            raise ValueError("atkinson: epsilon must be positive")
        if self.label is None:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self):
        if self.kind == "quantile":
            return f"quantile:{self.p:g}"
        if self.kind == "ratio":
            return f"ratio:{self.p:g}/{self.q:g}"
        if self.kind == "atkinson":
            return f"atkinson:{self.epsilon:g}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "SummarySpec":
        """Parse ``gini``, ``theil``, ``mean``, ``median``, ``quantile:0.9``,
        ``ratio:0.9/0.1``, ``atkinson:1.5`` or a named row such as ``P99``."""
        key = text.strip()
        if key in _NAMED:
            return _NAMED[key]
        m = re.fullmatch(r"(\w+)(?::([0-9.eE+-]+)(?:/([0-9.eE+-]+))?)?", key)
        if not m:
            raise ValueError(f"cannot parse summary {text!r}")
        kind, a, b = m.group(1).lower(), m.group(2), m.group(3)
        if kind == "quantile":
            return cls("quantile", p=float(a))
        if kind == "ratio":
            return cls("ratio", p=float(a), q=float(b))
        if kind == "atkinson":
            return cls("atkinson", epsilon=float(a))
        if a is not None:
            raise ValueError(f"summary {kind!r} takes no parameter")
        return cls(kind)


def _q(label, p):
    return SummarySpec("quantile", p=p, label=label)


def _r(label, p, q):
    return SummarySpec("ratio", p=p, q=q, label=label)


# The standard reporting rows, in table order.
DEFAULT_SUMMARIES = (
    SummarySpec("mean", label="Mean"),
    SummarySpec("median", label="Median"),
    _q("P99", 0.99),
    _q("P95", 0.95),
    _q("P90", 0.90),
    _q("Q3", 0.75),
    _q("Q1", 0.25),
    _q("P10", 0.10),
    _r("P95/D5", 0.95, 0.5),
    _r("P99/D5", 0.99, 0.5),
    _r("Q3/Q1", 0.75, 0.25),
    _r("D9/D1", 0.9, 0.1),
    _r("D9/D5", 0.9, 0.5),
    SummarySpec("gini", label="Gini"),
    SummarySpec("theil", label="Theil"),
    SummarySpec("atkinson", epsilon=1.5, label="Atkinson(1.5)"),
    SummarySpec("atkinson", epsilon=2.0, label="Atkinson(2)"),
)
_NAMED = {s.label: s for s in DEFAULT_SUMMARIES}


def evaluate_summary(spec: SummarySpec, sample, weights=None) -> float:
    """Plug-in value of ``spec`` on a weighted sample."""
    s = _as_sample(sample, weights)
    if spec.kind == "mean":
        return weighted_mean(s)
    if spec.kind in ("median", "quantile"):
        return weighted_quantile(s, spec.p)
    if spec.kind == "ratio":
        den = weighted_quantile(s, spec.q)
        if den <= 0:
            raise DegenerateSampleError(f"{spec.label}: denominator quantile is zero")
        return weighted_quantile(s, spec.p) / den
    if spec.kind == "gini":
        return gini_weighted(s)
    if spec.kind == "theil":
        return theil(s)
    return atkinson(s, spec.epsilon)
