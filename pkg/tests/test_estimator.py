from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from wealthineq import CensoredInequalityEstimator, DesignInequalityEstimator
from wealthineq.design_variance import linearize, ht_variance
from wealthineq.indices import SummarySpec, gini_weighted, theil

from datasets import small_dataset


def test_design_estimator_matches_functions():
    rng = np.random.default_rng(0)
    X = rng.lognormal(10, 1, size=(200, 3))
    w = rng.uniform(50, 150, size=200)
    est = DesignInequalityEstimator(summaries=["Gini", "Theil"]).fit(X, sample_weight=w)
    t = X.sum(axis=1)
    np.testing.assert_allclose(est.estimates_, [gini_weighted(t, w), theil(t, w)], rtol=1e-12)
    direct = ht_variance(linearize(SummarySpec.parse("Gini"), (t, w))).value
    np.testing.assert_allclose(est.variances_[0], direct, rtol=1e-10)
    assert est.n_features_in_ == 3
    assert est.summary()["Gini"] == est.estimates_[0]


def test_design_estimator_accepts_totals_and_default_summaries():
    t = np.random.default_rng(1).lognormal(10, 1, size=100)
    est = DesignInequalityEstimator().fit(t)
    assert len(est.labels_) == 17
    assert est.n_features_in_ == 1


def test_design_estimator_rejects_bad_input():
    with pytest.raises(ValueError):
        DesignInequalityEstimator().fit(np.ones(5), sample_weight=np.ones(4))
    with pytest.raises(ValueError):
        DesignInequalityEstimator().fit(np.array([1.0, np.nan, 2.0]))


def test_params_and_clone():
    est = CensoredInequalityEstimator(total_sweeps=50, seed=4)
    assert est.get_params()["total_sweeps"] == 50
    twin = clone(est).set_params(seed=5)
    assert twin.seed == 5 and est.seed == 4


def test_censored_estimator_requires_fit_and_dataset():
    est = CensoredInequalityEstimator()
    with pytest.raises(NotFittedError):
        est.summary()
    with pytest.raises(TypeError, match="SurveyDataset"):
        est.fit(np.ones((3, 5)))


def test_censored_estimator_fit():
    ds, _ = small_dataset(2, per_pattern=10)
    est = CensoredInequalityEstimator(total_sweeps=30, burn_in=10, seed=1, summaries=["Gini", "Mean"])
    est.fit(ds)
    assert est.labels_ == ("Gini", "Mean")
    assert np.all(est.regions_[:, 0] <= est.regions_[:, 1])
    lo, pred, hi = est.summary()["Gini"]
    assert 0 < pred < 1
    again = clone(est).fit(ds)
    np.testing.assert_array_equal(again.predictions_, est.predictions_)
