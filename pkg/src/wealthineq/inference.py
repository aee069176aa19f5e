"""Posterior predictions, credible regions and convergence diagnostics from recorded sweeps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .indices import _CDF_TOL

DEFAULT_ALPHA = 0.10
# Draws below which a quantile-based region is flagged as unreliable.
_HPD_MIN_DRAWS = 10_000


class InferenceWarning(UserWarning):
    pass


def posterior_mean(samples) -> float:
    """Arithmetic mean of the post-burn-in draws (optimal under quadratic loss).

    Computed as a shift by the first draw, so a constant series returns
    that value exactly.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no draws after burn-in")
    return float(x[0] + (x - x[0]).mean())


def sample_quantile(samples, p: float) -> float:
    """Left-continuous empirical quantile: smallest draw ``x`` with ``F_n(x) >= p``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    k = int(np.searchsorted(np.arange(1, x.size + 1) / x.size, p - _CDF_TOL, side="left"))
    return float(x[min(k, x.size - 1)])


def symmetric_region(samples, alpha: float = DEFAULT_ALPHA) -> tuple:
    """Equal-tailed region: empirical ``alpha/2`` and ``1 - alpha/2`` quantiles."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2.0 / alpha:
        warnings.warn(f"only {x.size} draws for a {1 - alpha:.0%} region", InferenceWarning, stacklevel=2)
    return sample_quantile(x, alpha / 2.0), sample_quantile(x, 1.0 - alpha / 2.0)


def hpd_region(samples, alpha: float = DEFAULT_ALPHA) -> tuple:
    """Shortest window of sorted draws containing ``ceil((1 - alpha) n)`` of them."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < _HPD_MIN_DRAWS:
        warnings.warn(f"HPD region from only {n} draws is noisy", InferenceWarning, stacklevel=2)
    k = min(n, int(np.ceil((1.0 - alpha) * n - 1e-9)))
    widths = x[k - 1:] - x[: n - k + 1]
    j = int(np.argmin(widths))
    return float(x[j]), float(x[j + k - 1])


def batch_means_se(samples, n_batches: int = 20) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    b = min(n_batches, n // 2)
    if b < 2:
        return float("nan")
    size = n // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(b))


def _difference_se(samples, n_batches: int = 20) -> float:
    """Standard error of the mean from successive differences of batch means.

    Agrees with :func:`batch_means_se` for a stationary series but is not
    inflated by a slow trend, which cancels in the differences.
    """
    x = np.asarray(samples, dtype=float).ravel()
    b = min(n_batches, x.size // 2)
    if b < 3:
        return float("nan")
    size = x.size // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(np.sqrt(np.mean(np.diff(means) ** 2) / 2.0 / b))


def effective_sample_size(samples) -> float:
    """Effective number of independent draws, ``n var / (n se^2)`` with batch-means se."""
    x = np.asarray(samples, dtype=float).ravel()
    se = batch_means_se(x)
    v = x.var(ddof=1) if x.size > 1 else 0.0
    if not np.isfinite(se) or se <= 0:
        return float(x.size)
    return float(min(x.size, v / se**2))


def running_mean(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    return np.cumsum(x) / np.arange(1, x.size + 1)


@dataclass
class ConvergenceReport:
    running_mean: np.ndarray
    split_half_delta: float
    drift: float
    drift_threshold: float
    flagged: bool
    ess: float
    seed_delta: float = float("nan")


def convergence_report(samples, other_chains=()) -> ConvergenceReport:
    """Running mean, split-half agreement and a drift flag for one series.

    The flag is raised when the running mean moves over the last quarter
    of the draws by more than four times the Monte Carlo standard error
    expected for such a change in a stationary series.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 draws")
    rm = running_mean(x)
    half = x.size // 2
    split = float(abs(x[:half].mean() - x[half:].mean())) if half else 0.0
    start = (3 * x.size) // 4
    drift = float(abs(rm[-1] - rm[start - 1])) if start >= 1 else 0.0
    se = _difference_se(x)
    # the running mean at 3n/4 and at n differ by (1/4)(mean of last quarter - mean of first 3/4),
    # whose standard deviation under stationarity is se / sqrt(3)
    threshold = 4.0 * se / np.sqrt(3.0) if np.isfinite(se) else np.inf
    seed_delta = float("nan")
    if other_chains:
        means = [x.mean()] + [np.mean(c) for c in other_chains]
        seed_delta = float(max(means) - min(means))
    return ConvergenceReport(rm, split, drift, float(threshold), bool(drift > threshold), effective_sample_size(x), seed_delta)


@dataclass
class PosteriorSummary:
    """Prediction and region of one summary.

    ``mean`` is the prediction: the average of the plug-in values over the
    post-burn-in sweeps (the draws ``g`` add a zero-mean model error whose
    average is known to be zero, so it is left out). ``raw_mean`` is the
    average of the draws ``g`` themselves.
    """

    label: str
    mean: float
    lower: float
    upper: float
    alpha: float
    n_used: int
    raw_mean: float
    mc_se: float
    ess: float
    hpd: tuple = ()
    diagnostics: ConvergenceReport = None
    warnings: list = field(default_factory=list)


def summarize(output, burn_in=None, alpha: float = DEFAULT_ALPHA, hpd: bool = False, others=()) -> list:
    """Posterior summaries of every recorded summary.

    ``output`` is one chain output or a list of them; with several chains
    the post-burn-in draws are pooled and the first chain's diagnostics
    carry the spread of chain means as ``seed_delta``. ``others`` are
    further chains used only for that spread.
    """
    outputs = list(output) if isinstance(output, (list, tuple)) else [output]
    first = outputs[0]
    B = first.config.burn_in if burn_in is None else burn_in
    for o in outputs:
        if not 0 <= B < o.T:
            raise ValueError(f"burn-in {B} outside [0, {o.T})")
    rest = outputs[1:] + list(others)
    rows = []
    for j, label in enumerate(first.labels):
        g = np.concatenate([o.g[B:, j] for o in outputs])
        ghat = np.concatenate([o.ghat[B:, j] for o in outputs])
        notes = []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", InferenceWarning)
            lo, hi = symmetric_region(g, alpha)
            h = hpd_region(g, alpha) if hpd else ()
        notes += [str(w.message) for w in caught]
        pred = posterior_mean(ghat)
        if not lo <= pred <= hi:
            notes.append("prediction outside the symmetric region (skewed posterior)")
        diag = convergence_report(first.g[B:, j], [o.g[B:, j] for o in rest])
        if diag.flagged:
            notes.append("running mean still drifting over the last quarter of the draws")
        ess = sum(effective_sample_size(o.g[B:, j]) for o in outputs)
        if ess < 2.0 / alpha:
            notes.append(f"effective sample size {ess:.0f} is small for a {1 - alpha:.0%} region")
        se = batch_means_se(g) if len(outputs) == 1 else float(
            np.sqrt(sum(batch_means_se(o.g[B:, j]) ** 2 for o in outputs)) / len(outputs)
        )
        rows.append(PosteriorSummary(
            label=label, mean=pred, lower=lo, upper=hi, alpha=alpha, n_used=len(g),
            raw_mean=posterior_mean(g), mc_se=se, ess=ess,
            hpd=h, diagnostics=diag, warnings=notes,
        ))
    return rows
