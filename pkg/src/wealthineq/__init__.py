"""Wealth inequality summaries from censored survey data.

Interval-censored, multi-component household wealth is completed by a
Gibbs sampler under a pattern-mixture lognormal model; each sweep yields
plug-in summaries with design-based variances, averaged into posterior
predictions and regions.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .data_model import HouseholdRecord, SurveyDataset, SurveyDesign
from .estimator import CensoredInequalityEstimator, DesignInequalityEstimator
from .gibbs import ChainConfig, run
from .indices import DEFAULT_SUMMARIES, SummarySpec, atkinson, gini_weighted, theil
from .inference import summarize

__all__ = [
    "CensoredInequalityEstimator",
    "ChainConfig",
    "DEFAULT_SUMMARIES",
    "DesignInequalityEstimator",
    "HouseholdRecord",
    "SummarySpec",
    "SurveyDataset",
    "SurveyDesign",
    "atkinson",
    "gini_weighted",
    "run",
    "summarize",
    "theil",
]
