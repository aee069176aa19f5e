"""Design-based variance estimation for plug-in summaries.

The variance of a nonlinear plug-in estimator is approximated by the
variance of the Horvitz-Thompson total of its linearized variable
``z_k``, the derivative of the weighted functional with respect to the
weight of unit ``k``. Each supported design has an analytic formula for
that variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .indices import DegenerateSampleError, SummarySpec, WeightedSample, _CDF_TOL

# z-value used to size the CDF-inversion step of the quantile density estimate
_WOODRUFF_Z = 1.96


class DesignError(ValueError):
    """Raised for unsupported or inconsistent designs."""


@dataclass(frozen=True)
class SampleDesign:
    """Per-unit design information for one realized sample.

    Parameters
    ----------
    kind : str
        ``SRSWOR``, ``StratifiedSRS``, ``UnequalProbFixedSize`` or
        ``TwoStageCluster``.
    strata : array, optional
        Stratum label of each unit (one stratum when omitted).
    psu : array, optional
        Primary-unit label of each unit; required for ``TwoStageCluster``.
    stratum_sizes : dict, optional
        Population size per stratum; defaults to the sum of weights.
    aux : array, optional
        ``(n, k)`` calibration auxiliaries. When set, variances are computed
        on the regression residuals of ``z`` on ``aux``.
    """

    kind: str = "SRSWOR"
    strata: Optional[np.ndarray] = None
    psu: Optional[np.ndarray] = None
    stratum_sizes: Optional[dict] = None
    aux: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("SRSWOR", "StratifiedSRS", "UnequalProbFixedSize", "TwoStageCluster"):
            raise DesignError(f"unsupported design kind {self.kind!r}")
        if self.kind == "TwoStageCluster" and self.psu is None:
            raise DesignError("TwoStageCluster needs psu labels")

    def labels(self, n):
        if self.strata is None or self.kind == "SRSWOR":
            return np.zeros(n, dtype=int)
        return np.asarray(self.strata)


@dataclass(frozen=True)
class LinearizedSample:
    """Linearized variable of a statistic with the design it was sampled under."""

    z: np.ndarray
    weights: np.ndarray
    design: SampleDesign = field(default_factory=SampleDesign)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if z.shape != w.shape:
            raise ValueError("z and weights differ in length")
        if not np.all(np.isfinite(z)):
            raise ValueError("linearized variable must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    components: dict = field(default_factory=dict)
    notes: tuple = ()


def ht_total(values, weights) -> float:
    """Horvitz-Thompson total ``sum_k w_k v_k`` (0 on an empty sample)."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != w.shape:
        raise ValueError("values and weights differ in length")
    return float(np.dot(w, v))


def _group_index(labels):
    uniq, inv = np.unique(np.asarray(labels), return_inverse=True)
    return uniq, inv


def _stratified_terms(y, inv, n_groups, fpc):
    """Per-group ``fpc * n/(n-1) * sum (y - ybar)^2``."""
    n = np.bincount(inv, minlength=n_groups).astype(float)
    if np.any(n < 2):
        raise DesignError("every stratum needs at least 2 sampled units for variance estimation")
    sums = np.bincount(inv, weights=y, minlength=n_groups)
    ybar = sums / n
    ss = np.bincount(inv, weights=(y - ybar[inv]) ** 2, minlength=n_groups)
    return fpc * n / (n - 1.0) * ss


def ht_variance(ls: LinearizedSample) -> VarianceEstimate:
    """Estimated variance of the HT total of ``z`` under the sample's design.

    Stratified SRS uses ``(1 - f_h) n_h/(n_h - 1) sum (w z - mean)^2`` per
    stratum (exactly unbiased for constant within-stratum weights);
    fixed-size unequal-probability sampling uses the max-entropy
    approximation that needs only first-order inclusion probabilities
    ``1/w``; two-stage designs use the with-replacement approximation on
    PSU totals.
    """
    d = ls.design
    z = ls.z
    if d.aux is not None:
        z = calibration_residuals(z, ls.weights, d.aux)
    w = ls.weights
    y = w * z
    labels = d.labels(len(z))
    uniq, inv = _group_index(labels)
    G = len(uniq)
    notes = ()
    if d.kind in ("SRSWOR", "StratifiedSRS"):
        n_h = np.bincount(inv, minlength=G).astype(float)
        N_h = _stratum_sizes(d, uniq, inv, w, G)
        f = np.where(N_h > 0, n_h / N_h, 0.0)
        fpc = np.clip(1.0 - f, 0.0, None)
        terms = _stratified_terms(y, inv, G, fpc)
    elif d.kind == "UnequalProbFixedSize":
        pi = 1.0 / w
        if np.any(pi > 1 + 1e-12):
            raise DesignError("weights below 1 imply inclusion probabilities above 1")
        terms = np.zeros(G)
        for g in range(G):
            m = inv == g
            terms[g] = _max_entropy_variance_estimate(z[m], pi[m])
    else:
        psu = np.asarray(d.psu)
        keys = np.array([f"{a}\x00{b}" for a, b in zip(labels, psu)])
        pk, pinv = np.unique(keys, return_inverse=True)
        psu_tot = np.bincount(pinv, weights=y, minlength=len(pk))
        # stratum of each psu
        first = np.zeros(len(pk), dtype=int)
        first[pinv] = np.arange(len(pinv))
        psu_stratum = inv[first]
        terms = _stratified_terms(psu_tot, psu_stratum, G, 1.0)
        notes = ("two-stage: with-replacement PSU approximation, first-stage variance only",)
    comps = {_plain(k): float(v) for k, v in zip(uniq, terms)}
    return VarianceEstimate(float(max(terms.sum(), 0.0)), "Linearization", comps, notes)


def _plain(k):
    return k.item() if hasattr(k, "item") else k


def _stratum_sizes(d, uniq, inv, w, G):
    est = np.bincount(inv, weights=w, minlength=G)
    sizes = d.stratum_sizes or {}
    if G == 1 and len(sizes) == 1:
        return np.array([float(next(iter(sizes.values())))])
    return np.array([float(sizes.get(_plain(k), e)) for k, e in zip(uniq, est)])


def _max_entropy_variance_estimate(z, pi):
    n = len(z)
    if n < 2:
        raise DesignError("unequal-probability variance needs at least 2 units per stratum")
    c = (1.0 - pi) * n / (n - 1.0)
    ycheck = z / pi
    if c.sum() <= 0:
        return 0.0
    ystar = np.dot(c, ycheck) / c.sum()
    return float(np.dot(c, (ycheck - ystar) ** 2))


def population_variance(values, pi, strata=None, kind="StratifiedSRS") -> float:
    """Design variance of the HT total computed from the whole population.

    Exact for SRSWOR and stratified SRS; for fixed-size max-entropy
    designs this is the first-order approximation with
    ``b_k = pi_k (1 - pi_k) N / (N - 1)``.
    """
    y = np.asarray(values, dtype=float)
    pi = np.asarray(pi, dtype=float)
    labels = np.zeros(len(y), dtype=int) if strata is None or kind == "SRSWOR" else np.asarray(strata)
    uniq, inv = _group_index(labels)
    total = 0.0
    for g in range(len(uniq)):
        m = inv == g
        yg, pg = y[m], pi[m]
        N = len(yg)
        if N < 2:
            continue
        if kind in ("SRSWOR", "StratifiedSRS"):
            n = pg[0] * N
            total += N**2 * (1.0 - n / N) * np.var(yg, ddof=1) / n
        elif kind == "UnequalProbFixedSize":
            b = pg * (1.0 - pg) * N / (N - 1.0)
            ycheck = yg / pg
            ystar = np.dot(b, ycheck) / b.sum()
            total += float(np.dot(b, (ycheck - ystar) ** 2))
        else:
            raise DesignError(f"population variance not available for {kind}")
    return float(total)


class PreparedSample:
    """A weighted sample sorted once, evaluating several summaries cheaply.

    Used per sweep by the sampler, where the same wealth vector is
    summarized under many specs.
    """

    def __init__(self, values, weights):
        t = np.asarray(values, dtype=float)
        w = np.asarray(weights, dtype=float)
        self.t, self.w = t, w
        self.order = np.argsort(t, kind="stable")
        self.ts = t[self.order]
        self.ws = w[self.order]
        self.cum = np.cumsum(self.ws)
        # same summation as the plain index functions, so values agree to the last bit
        self.N = float(w.sum())
        self.Y = float(np.dot(w, t))
        self._cache = {}

    # values -------------------------------------------------------------
    def quantile(self, p):
        key = ("q", p)
        if key not in self._cache:
            idx = np.searchsorted(self.cum / self.N, p - _CDF_TOL, side="left")
            self._cache[key] = float(self.ts[min(int(idx), self.ts.size - 1)])
        return self._cache[key]

    def value(self, spec: SummarySpec) -> float:
        k = spec.kind
        if k == "mean":
            return self.Y / self.N
        if k in ("median", "quantile"):
            return self.quantile(spec.p)
        if k == "ratio":
            den = self.quantile(spec.q)
            if den <= 0:
                raise DegenerateSampleError(f"{spec.label}: denominator quantile is zero")
            return self.quantile(spec.p) / den
        if self.Y <= 0:
            raise DegenerateSampleError("degenerate population: total wealth is zero")
        if k == "gini":
            return float(np.dot((2.0 * self.cum - self.ws) * self.ws, self.ts) / (self.N * self.Y) - 1.0)
        if self.ts[0] <= 0:
            raise DegenerateSampleError(f"{k} requires positive wealth")
        mean = self.Y / self.N
        if k == "theil":
            rel = self.t / mean
            return float(np.dot(self.w, rel * np.log(rel)) / self.N)
        eps = spec.epsilon
        rel = self.t / mean
        if eps == 1.0:
            return float(1.0 - np.exp(np.dot(self.w, np.log(rel)) / self.N))
        e = 1.0 - eps
        return float(1.0 - (np.dot(self.w, rel**e) / self.N) ** (1.0 / e))

    # linearized variables ----------------------------------------------
    def inverse_density(self, p):
        """Estimate ``1/f(Q(p))`` by a Woodruff-style CDF-inversion slope."""
        n_eff = self.N**2 / np.dot(self.ws, self.ws)
        delta = _WOODRUFF_Z * np.sqrt(p * (1.0 - p) / n_eff)
        lo, hi = max(p - delta, 0.5 / n_eff), min(p + delta, 1.0 - 0.5 / n_eff)
        # interpolated CDF inverse through mid-step plotting positions
        pos = (self.cum - 0.5 * self.ws) / self.N
        qlo, qhi = np.interp([lo, hi], pos, self.ts)
        if hi <= lo:
            return 0.0
        return float((qhi - qlo) / (hi - lo))

    def influence(self, spec: SummarySpec) -> np.ndarray:
        """Per-unit derivative of the weighted functional w.r.t. the unit's weight."""
        k = spec.kind
        t, N, Y = self.t, self.N, self.Y
        if k == "mean":
            return (t - Y / N) / N
        if k in ("median", "quantile"):
            return self._quantile_influence(spec.p)
        if k == "ratio":
            qp, qq = self.quantile(spec.p), self.quantile(spec.q)
            zp, zq = self._quantile_influence(spec.p), self._quantile_influence(spec.q)
            return (zp - (qp / qq) * zq) / qq
        if k == "gini":
            g = self.value(spec)
            cum_n = np.empty_like(t)
            cum_y = np.empty_like(t)
            cum_n[self.order] = self.cum
            cum_y[self.order] = np.cumsum(self.ws * self.ts)
            return (2.0 * t * cum_n - 2.0 * cum_y + Y - N * t - g * (Y + N * t)) / (N * Y)
        if k == "theil":
            s = float(np.dot(self.w, t * np.log(t)))
            return (t * np.log(t) - t * s / Y - t) / Y + 1.0 / N
        eps = spec.epsilon
        a = self.value(spec)
        dlog_mean = t / Y - 1.0 / N
        if eps == 1.0:
            lbar = float(np.dot(self.w, np.log(t))) / N
            dlog_m = (np.log(t) - lbar) / N
        else:
            e = 1.0 - eps
            B = float(np.dot(self.w, t**e))
            dlog_m = (t**e / B - 1.0 / N) / e
        return -(1.0 - a) * (dlog_m - dlog_mean)

    def _quantile_influence(self, p):
        q = self.quantile(p)
        return -((self.t <= q).astype(float) - p) * self.inverse_density(p) / self.N


_LINEARIZABLE = ("mean", "median", "quantile", "ratio", "gini", "theil", "atkinson")


def linearize(spec: SummarySpec, sample, design: Optional[SampleDesign] = None) -> LinearizedSample:
    """Linearized variable of the plug-in estimator of ``spec``.

    ``z_k`` is the derivative of the weighted functional along a point mass
    at unit ``k``; the HT-total variance of ``z`` approximates the
    sampling variance of the plug-in estimate.
    """
    if spec.kind not in _LINEARIZABLE:
        raise DesignError(f"no linearization for {spec.kind!r}")
    s = sample if isinstance(sample, WeightedSample) else WeightedSample(*sample)
    prep = PreparedSample(s.values, s.weights)
    return LinearizedSample(prep.influence(spec), s.weights, design or SampleDesign())


def _replicate_groups(design: SampleDesign, n):
    labels = design.labels(n)
    if design.kind == "TwoStageCluster":
        units = np.array([f"{a}\x00{b}" for a, b in zip(labels, np.asarray(design.psu))])
    elif design.kind in ("SRSWOR", "StratifiedSRS"):
        units = np.arange(n)
    else:
        raise DesignError(f"jackknife not available for {design.kind}")
    return labels, units


def jackknife_variance(spec: SummarySpec, sample, design: Optional[SampleDesign] = None) -> VarianceEstimate:
    """Delete-one jackknife (units for SRS designs, PSUs for cluster designs).

    Deleting a unit of stratum ``h`` rescales the remaining weights of that
    stratum by ``n_h/(n_h - 1)``; the variance is
    ``sum_h (1 - f_h) (n_h - 1)/n_h sum_j (theta_(hj) - theta_h)^2``
    with the finite-population correction dropped for cluster designs.
    """
    design = design or SampleDesign()
    s = sample if isinstance(sample, WeightedSample) else WeightedSample(*sample)
    t, w = s.values, s.weights
    labels, units = _replicate_groups(design, len(t))
    uniq, inv = _group_index(labels)
    N_all = _stratum_sizes(design, uniq, inv, w, len(uniq))
    comps = {}
    total = 0.0
    for g, h in enumerate(uniq):
        in_h = inv == g
        h_units = np.unique(units[in_h])
        n_h = len(h_units)
        if n_h < 2:
            raise DesignError(f"stratum {h!r} has fewer than 2 replicate units")
        if design.kind == "TwoStageCluster":
            fpc = 1.0
        else:
            fpc = max(1.0 - n_h / N_all[g], 0.0)
        reps = np.empty(n_h)
        for j, u in enumerate(h_units):
            drop = units == u
            wj = np.where(in_h, w * n_h / (n_h - 1.0), w)
            keep = ~drop
            reps[j] = PreparedSample(t[keep], wj[keep]).value(spec)
        v = fpc * (n_h - 1.0) / n_h * np.sum((reps - reps.mean()) ** 2)
        comps[_plain(h)] = float(v)
        total += v
    return VarianceEstimate(float(total), "Jackknife", comps)


def nonresponse_adjust(weights, strata, response_flags):
    """Divide respondent weights by the observed per-stratum response rate.

    Returns ``(adjusted_weights, respondent_mask)``; the adjusted weights
    are aligned with the respondents and preserve each stratum's weight sum.
    """
    w = np.asarray(weights, dtype=float)
    strata = np.asarray(strata)
    r = np.asarray(response_flags, dtype=bool)
    uniq, inv = _group_index(strata)
    tot = np.bincount(inv, weights=w, minlength=len(uniq))
    resp = np.bincount(inv, weights=w * r, minlength=len(uniq))
    if np.any(resp <= 0):
        bad = [_plain(u) for u, v in zip(uniq, resp) if v <= 0]
        raise DesignError(f"strata without respondents: {bad}")
    factor = tot / resp
    return (w * factor[inv])[r], r


def _collinear_columns(X, w):
    cols = []
    Xw = X * np.sqrt(w)[:, None]
    rank = 0
    for j in range(X.shape[1]):
        r = np.linalg.matrix_rank(Xw[:, : j + 1])
        if r == rank:
            cols.append(j)
        rank = r
    return cols


def calibrate(weights, aux, known_totals):
    """Linear (GREG / chi-square distance) calibration of weights.

    Returns ``w_k (1 + x_k' lambda)`` such that the calibrated totals of the
    auxiliaries equal ``known_totals``.
    """
    w = np.asarray(weights, dtype=float)
    X = np.asarray(aux, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T = np.asarray(known_totals, dtype=float).ravel()
    if X.shape[1] != T.size:
        raise DesignError("one known total per auxiliary column is required")
    bad = _collinear_columns(X, w)
    if bad:
        raise DesignError(f"auxiliary matrix is rank deficient; collinear columns {bad}")
    M = (X * w[:, None]).T @ X
    lam = np.linalg.solve(M, T - X.T @ w)
    return w * (1.0 + X @ lam)


def calibration_residuals(z, weights, aux):
    """Residuals of ``z`` after weighted regression on the auxiliaries."""
    X = np.asarray(aux, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = np.asarray(weights, dtype=float)
    M = (X * w[:, None]).T @ X
    beta = np.linalg.solve(M, (X * w[:, None]).T @ z)
    return z - X @ beta


class VarianceOperator:
    """Precomputed design structure applying ``ht_variance`` to many columns.

    ``variance(Z)`` returns one variance per column of the ``(n, k)`` array
    ``Z`` and agrees with :func:`ht_variance` column by column. The sampler
    uses it to get the variances of all summaries of a sweep in one pass.
    """

    def __init__(self, weights, design: Optional[SampleDesign] = None):
        d = design or SampleDesign()
        w = np.asarray(weights, dtype=float)
        n = len(w)
        self.design, self.w = d, w
        labels = d.labels(n)
        uniq, inv = _group_index(labels)
        G = len(uniq)
        self._aux_proj = None
        if d.aux is not None:
            X = np.asarray(d.aux, dtype=float)
            X = X[:, None] if X.ndim == 1 else X
            XtW = (X * w[:, None]).T
            self._aux_proj = (X, np.linalg.solve(XtW @ X, XtW))
        if d.kind in ("SRSWOR", "StratifiedSRS"):
            n_h = np.bincount(inv, minlength=G).astype(float)
            if np.any(n_h < 2):
                raise DesignError("every stratum needs at least 2 sampled units for variance estimation")
            N_h = _stratum_sizes(d, uniq, inv, w, G)
            fpc = np.clip(1.0 - np.where(N_h > 0, n_h / N_h, 0.0), 0.0, None)
            self._unit_groups, self._factor = inv, fpc * n_h / (n_h - 1.0)
            self._pi = None
        elif d.kind == "UnequalProbFixedSize":
            pi = 1.0 / w
            if np.any(pi > 1 + 1e-12):
                raise DesignError("weights below 1 imply inclusion probabilities above 1")
            n_h = np.bincount(inv, minlength=G).astype(float)
            if np.any(n_h < 2):
                raise DesignError("unequal-probability variance needs at least 2 units per stratum")
            c = (1.0 - pi) * (n_h / (n_h - 1.0))[inv]
            self._pi, self._c, self._csum = pi, c, np.bincount(inv, weights=c, minlength=G)
            self._unit_groups = inv
        else:
            psu = np.asarray(d.psu)
            keys = np.array([f"{a}\x00{b}" for a, b in zip(labels, psu)])
            pk, pinv = np.unique(keys, return_inverse=True)
            first = np.zeros(len(pk), dtype=int)
            first[pinv] = np.arange(n)
            psu_stratum = inv[first]
            n_h = np.bincount(psu_stratum, minlength=G).astype(float)
            if np.any(n_h < 2):
                raise DesignError("every stratum needs at least 2 sampled units for variance estimation")
            self._psu, self._unit_groups, self._factor = pinv, psu_stratum, n_h / (n_h - 1.0)
            self._pi = None
        self._G = G

    @staticmethod
    def _group_sums(idx, Y, G):
        onehot = sparse.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(G, len(idx)))
        return np.asarray(onehot @ Y)

    def variance(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        one = Z.ndim == 1
        Z = Z[:, None] if one else Z
        if self._aux_proj is not None:
            X, P = self._aux_proj
            Z = Z - X @ (P @ Z)
        w, G = self.w, self._G
        if self.design.kind == "UnequalProbFixedSize":
            inv = self._unit_groups
            yc = Z / self._pi[:, None]
            ystar = self._group_sums(inv, self._c[:, None] * yc, G) / np.where(self._csum > 0, self._csum, 1.0)[:, None]
            out = (self._c[:, None] * (yc - ystar[inv]) ** 2).sum(axis=0)
        else:
            Y = w[:, None] * Z
            groups = self._unit_groups
            if self.design.kind == "TwoStageCluster":
                Y = self._group_sums(self._psu, Y, len(groups))
            cnt = np.bincount(groups, minlength=G).astype(float)
            mean = self._group_sums(groups, Y, G) / cnt[:, None]
            ss = self._group_sums(groups, (Y - mean[groups]) ** 2, G)
            out = (self._factor[:, None] * ss).sum(axis=0)
        out = np.maximum(out, 0.0)
        return float(out[0]) if one else out
