"""scikit-learn style front ends.

``DesignInequalityEstimator`` is a plain plug-in estimator on point-measured
wealth with design-based variances. ``CensoredInequalityEstimator`` runs the
Gibbs sampler on a censored survey dataset. Neither has a ``predict``
in the supervised sense: ``fit`` consumes one sample and the fitted
attributes hold the estimates.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .censoring import DEFAULT_CAP, TAX_THRESHOLD
from .data_model import SurveyDataset
from .design_variance import PreparedSample, SampleDesign, VarianceOperator
from .gibbs import ChainConfig, run
from .indices import DEFAULT_SUMMARIES, SummarySpec
from .inference import DEFAULT_ALPHA, summarize


def _specs(summaries):
    if summaries is None:
        return DEFAULT_SUMMARIES
    return tuple(s if isinstance(s, SummarySpec) else SummarySpec.parse(s) for s in summaries)


class DesignInequalityEstimator(BaseEstimator):
    """Plug-in summaries of observed wealth with linearized design variances.

    Parameters
    ----------
    summaries : sequence of str or SummarySpec, optional
        Defaults to the 17 standard summaries.
    design : SampleDesign, optional
        Defaults to simple random sampling without replacement.
    """

    def __init__(self, summaries=None, design=None):
        self.summaries = summaries
        self.design = design

    def fit(self, X, y=None, sample_weight=None):
        """``X`` is ``(n, L)`` component amounts summed per row, or ``(n,)`` totals."""
        X = check_array(X, ensure_2d=False, dtype=float)
        t = X.sum(axis=1) if X.ndim == 2 else X
        w = np.ones(len(t)) if sample_weight is None else check_array(sample_weight, ensure_2d=False, dtype=float)
        if w.shape != t.shape:
            raise ValueError("sample_weight must have one entry per row")
        specs = _specs(self.summaries)
        design = self.design if self.design is not None else SampleDesign("SRSWOR")
        prep = PreparedSample(t, w)
        Z = np.column_stack([prep.influence(s) for s in specs])
        self.labels_ = tuple(s.label for s in specs)
        self.estimates_ = np.array([prep.value(s) for s in specs])
        self.variances_ = np.asarray(VarianceOperator(w, design).variance(Z))
        self.n_features_in_ = 1 if X.ndim == 1 else X.shape[1]
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "estimates_")
        return dict(zip(self.labels_, self.estimates_))


class CensoredInequalityEstimator(BaseEstimator):
    """Posterior predictions of inequality summaries from censored survey data.

    Hyperparameters mirror :class:`ChainConfig`. ``fit`` takes a
    :class:`SurveyDataset`, not an array, since censoring domains,
    holdings patterns and design labels do not fit a feature matrix.
    """

    def __init__(self, total_sweeps=2000, burn_in=500, seed=0, chains=1, summaries=None,
                 variance_mode="Linearization", alpha=DEFAULT_ALPHA, cap=DEFAULT_CAP,
                 tax_threshold=TAX_THRESHOLD):
        self.total_sweeps = total_sweeps
        self.burn_in = burn_in
        self.seed = seed
        self.chains = chains
        self.summaries = summaries
        self.variance_mode = variance_mode
        self.alpha = alpha
        self.cap = cap
        self.tax_threshold = tax_threshold

    def _config(self):
        return ChainConfig(
            total_sweeps=self.total_sweeps, burn_in=self.burn_in, seed=self.seed, chains=self.chains,
            summaries=_specs(self.summaries), variance_mode=self.variance_mode, cap=self.cap,
            tax_threshold=self.tax_threshold,
        )

    def fit(self, dataset: SurveyDataset, y=None):
        if not isinstance(dataset, SurveyDataset):
            raise TypeError(f"expected a SurveyDataset, got {type(dataset).__name__}")
        outputs = run(dataset, self._config())
        self.outputs_ = outputs
        self.summaries_ = summarize(outputs, alpha=self.alpha)
        self.labels_ = tuple(s.label for s in self.summaries_)
        self.predictions_ = np.array([s.mean for s in self.summaries_])
        self.regions_ = np.array([(s.lower, s.upper) for s in self.summaries_])
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "summaries_")
        return {s.label: (s.lower, s.mean, s.upper) for s in self.summaries_}
