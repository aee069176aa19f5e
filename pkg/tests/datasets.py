"""Small hand-built survey datasets for sampler and file-format tests."""

from __future__ import annotations

import numpy as np

from wealthineq.data_model import (
    PATTERNS_5,
    CensoringEvidence,
    HouseholdRecord,
    IsfEvidence,
    SurveyDataset,
    SurveyDesign,
)
from wealthineq.synth import CHECKING_GRID, PROPERTY_GRID, REMAINDER_GRID, bracket_of

GRIDS = (CHECKING_GRID, PROPERTY_GRID, PROPERTY_GRID, PROPERTY_GRID, REMAINDER_GRID)


def small_dataset(seed=0, per_pattern=12, patterns=(1, 2, 5, 8), point=False, tax=True, design=None):
    """Households with bracketed lognormal wealth; returns ``(dataset, true wealth by id)``."""
    rng = np.random.default_rng(seed)
    records, truth = [], {}
    k = 0
    for i in patterns:
        flags = PATTERNS_5[i - 1]
        for _ in range(per_pattern):
            x = rng.normal()
            w = np.where(flags, np.round(np.exp(rng.normal(9 + np.arange(5) * 0.5 + 0.3 * x, 1.0)), 2), 0.0)
            w = np.maximum(w, np.array(flags) * 1.0)
            bounds = tuple(
                None if not f else ((w[l], w[l]) if point else bracket_of(w[l], GRIDS[l]))
                for l, f in enumerate(flags)
            )
            isf = None
            if tax and not point and k % 3 == 0:
                taxable = w[0] + 0.8 * w[1] + w[2] + w[3] + w[4]
                isf = IsfEvidence(pays_tax=bool(taxable >= 720_000))
            covs = tuple((1.0, x) if f else None for f in flags)
            rid = f"r{k:04d}"
            records.append(HouseholdRecord(
                rid, float(rng.uniform(5, 15)), flags, (1.0,) * 5, covs,
                CensoringEvidence(bounds, None, isf), stratum=str(k % 2),
            ))
            truth[rid] = w
            k += 1
    return SurveyDataset(tuple(records), design or SurveyDesign("StratifiedSRS")), truth
