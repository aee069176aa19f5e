"""Shared domain types: holdings patterns, household records, populations, designs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Column order of the holdings tables. Row l gives the flag of component l+1.
PATTERNS_5 = (
    (1, 1, 1, 1, 1),
    (1, 1, 1, 0, 1),
    (1, 1, 0, 1, 1),
    (1, 0, 1, 1, 1),
    (1, 1, 0, 0, 1),
    (1, 0, 1, 0, 1),
    (1, 0, 0, 1, 1),
    (1, 0, 0, 0, 1),
)
PATTERNS_4 = (
    (1, 1, 1, 1),
    (1, 1, 0, 1),
    (1, 0, 1, 1),
    (1, 0, 0, 1),
)
PATTERN_TABLES = {5: PATTERNS_5, 4: PATTERNS_4}

COMPONENT_NAMES = {
    5: ("financial", "principal_residence", "other_real_estate", "professional", "remainder"),
    4: ("financial", "real_estate", "professional", "remainder"),
}
# Index of the component carrying a fractional ownership share (0-based).
SHARED_COMPONENT = {5: 1, 4: None}


class DataError(ValueError):
    """Raised when input data violate a structural invariant."""


@dataclass(frozen=True)
class HoldingsVector:
    """Binary holdings flags, one per wealth component."""

    flags: tuple

    def __post_init__(self):
        flags = tuple(int(f) for f in self.flags)
        if len(flags) not in PATTERN_TABLES:
            raise DataError(f"holdings must have 4 or 5 flags, got {len(flags)}")
        if any(f not in (0, 1) for f in flags):
            raise DataError(f"holdings flags must be 0/1, got {flags}")
        if flags[0] != 1 or flags[-1] != 1:
            raise DataError(
                f"financial wealth and remainder are always held, got {flags}"
            )
        object.__setattr__(self, "flags", flags)

    @property
    def n_components(self) -> int:
        return len(self.flags)

    @property
    def held(self) -> tuple:
        return tuple(i for i, f in enumerate(self.flags) if f)

    def __len__(self):
        return len(self.flags)

    def __getitem__(self, i):
        return self.flags[i]


def pattern_index(d) -> int:
    """Return the 1-based holdings-pattern index of ``d``.

    Numbering follows the fixed column order of the holdings tables
    (group 1 holds everything, the last group holds only financial
    wealth and the remainder).
    """
    if not isinstance(d, HoldingsVector):
        d = HoldingsVector(tuple(d))
    return PATTERN_TABLES[d.n_components].index(d.flags) + 1


def pattern_flags(index: int, n_components: int = 5) -> HoldingsVector:
    """Inverse of :func:`pattern_index`."""
    table = PATTERN_TABLES[n_components]
    if not 1 <= index <= len(table):
        raise DataError(f"pattern index must be in 1..{len(table)}, got {index}")
    return HoldingsVector(table[index - 1])


def total_wealth(wealth, shares=None, holdings=None) -> float:
    """Total wealth ``sum_l s^l w^l``; components not held contribute nothing."""
    w = np.asarray(wealth, dtype=float)
    s = np.ones_like(w) if shares is None else np.asarray(shares, dtype=float)
    if holdings is not None:
        flags = holdings.flags if isinstance(holdings, HoldingsVector) else holdings
        w = np.where(np.asarray(flags) == 1, w, 0.0)
    return float(np.dot(s, w))


@dataclass(frozen=True)
class IsfEvidence:
    """Wealth-tax liability evidence for one household."""

    pays_tax: bool
    debt: float = 0.0
    nd_min: float = 0.0
    nd_max: float = 0.0
    i_flag: int = 0

    def __post_init__(self):
        if self.debt < 0:
            raise DataError("debt must be nonnegative")
        if self.nd_min < 0 or self.nd_max < self.nd_min:
            raise DataError(f"need 0 <= nd_min <= nd_max, got [{self.nd_min}, {self.nd_max}]")
        if self.i_flag not in (0, 1):
            raise DataError("i_flag must be 0 or 1")


@dataclass(frozen=True)
class CensoringEvidence:
    """Bracket responses, overview total and wealth-tax status of a household.

    ``component_bounds[l]`` is ``(lo, hi)`` for held components and ``None``
    otherwise; ``hi`` may be ``inf`` for unbounded brackets.
    """

    component_bounds: tuple
    total_bracket: Optional[tuple] = None
    isf: Optional[IsfEvidence] = None

    def __post_init__(self):
        bounds = []
        for l, b in enumerate(self.component_bounds):
            if b is None:
                bounds.append(None)
                continue
            lo, hi = float(b[0]), float(b[1])
            if not (lo >= 0 and hi >= lo):
                raise DataError(f"component {l + 1}: need 0 <= lo <= hi, got [{lo}, {hi}]")
            bounds.append((lo, hi))
        object.__setattr__(self, "component_bounds", tuple(bounds))
        if self.total_bracket is not None:
            lo, hi = float(self.total_bracket[0]), float(self.total_bracket[1])
            if not (lo >= 0 and hi >= lo):
                raise DataError(f"total bracket: need 0 <= lo <= hi, got [{lo}, {hi}]")
            object.__setattr__(self, "total_bracket", (lo, hi))


@dataclass(frozen=True)
class HouseholdRecord:
    """One sampled, responding household."""

    id: str
    weight: float
    holdings: HoldingsVector
    shares: tuple
    covariates: tuple
    evidence: CensoringEvidence
    stratum: str = "0"
    psu: Optional[str] = None
    aux: Optional[tuple] = None

    def __post_init__(self):
        if not isinstance(self.holdings, HoldingsVector):
            object.__setattr__(self, "holdings", HoldingsVector(tuple(self.holdings)))
        L = self.holdings.n_components
        if not np.isfinite(self.weight) or self.weight <= 0:
            raise DataError(f"household {self.id}: weight must be positive, got {self.weight}")
        shares = tuple(float(s) for s in self.shares)
        if len(shares) != L:
            raise DataError(f"household {self.id}: expected {L} shares")
        for l, s in enumerate(shares):
            if not 0 < s <= 1:
                raise DataError(f"household {self.id}: share {l + 1} must be in (0, 1]")
            if l != SHARED_COMPONENT[L] and s != 1.0:
                raise DataError(f"household {self.id}: only the principal residence may have a share != 1")
        object.__setattr__(self, "shares", shares)
        if len(self.covariates) != L:
            raise DataError(f"household {self.id}: expected {L} covariate vectors")
        covs = []
        for l, (flag, x) in enumerate(zip(self.holdings.flags, self.covariates)):
            if flag:
                if x is None or len(x) == 0:
                    raise DataError(f"household {self.id}: missing covariates for held component {l + 1}")
                x = tuple(float(v) for v in x)
                if x[0] != 1.0:
                    raise DataError(f"household {self.id}: covariates of component {l + 1} must start with 1")
                covs.append(x)
            else:
                if x is not None:
                    raise DataError(f"household {self.id}: covariates given for unheld component {l + 1}")
                covs.append(None)
        object.__setattr__(self, "covariates", tuple(covs))
        if len(self.evidence.component_bounds) != L:
            raise DataError(f"household {self.id}: expected {L} component bounds")
        for l, flag in enumerate(self.holdings.flags):
            if bool(flag) != (self.evidence.component_bounds[l] is not None):
                raise DataError(f"household {self.id}: bounds must be given exactly for held components")
        isf = self.evidence.isf
        if isf is not None and (isf.nd_max > 0 or isf.i_flag) and not self.holdings.flags[-2]:
            raise DataError(f"household {self.id}: professional-wealth tax fields without professional holdings")

    @property
    def n_components(self) -> int:
        return self.holdings.n_components

    @property
    def pattern(self) -> int:
        return pattern_index(self.holdings)


@dataclass(frozen=True)
class Population:
    """Finite population with known wealth vectors (used by the synthetic oracle)."""

    wealth: np.ndarray  # (N, L), zero where not held
    holdings: np.ndarray  # (N, L) 0/1
    shares: np.ndarray  # (N, L)
    covariates: np.ndarray  # (N, q) household-level covariates, no constant
    strata: np.ndarray  # (N,) stratum labels

    def __post_init__(self):
        n = len(self.wealth)
        for name in ("holdings", "shares", "covariates", "strata"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} must have {n} rows")
        if np.any(self.total < 0):
            raise DataError("total wealth must be nonnegative")

    @property
    def N(self) -> int:
        return len(self.wealth)

    @property
    def total(self) -> np.ndarray:
        return np.einsum("kl,kl->k", self.shares, self.wealth)


DESIGN_KINDS = ("SRSWOR", "StratifiedSRS", "UnequalProbFixedSize", "TwoStageCluster")


@dataclass(frozen=True)
class SurveyDesign:
    """Sampling design descriptor used by the variance machinery.

    Parameters
    ----------
    kind : str
        One of ``DESIGN_KINDS``.
    strata : dict, optional
        Maps stratum id to its population size ``N_h``; when omitted the
        size is estimated by the sum of weights in the stratum.
    calibration_totals : tuple, optional
        Known population totals of the auxiliary variables carried by the
        records (``HouseholdRecord.aux``).
    response_rates : dict, optional
        Per-stratum response rates, informational.
    """

    kind: str = "StratifiedSRS"
    strata: Optional[dict] = None
    calibration_totals: Optional[tuple] = None
    response_rates: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise DataError(f"unknown design kind {self.kind!r}; expected one of {DESIGN_KINDS}")


@dataclass(frozen=True)
class SurveyDataset:
    """A validated collection of household records sharing one component count."""

    records: tuple
    design: SurveyDesign = field(default_factory=SurveyDesign)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise DataError("dataset has no households")
        counts = {r.n_components for r in records}
        if len(counts) != 1:
            raise DataError(f"mixed component counts in dataset: {sorted(counts)}")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise DataError("household ids must be unique")
        L = records[0].n_components
        for l in range(L):
            dims = {len(r.covariates[l]) for r in records if r.covariates[l] is not None}
            if len(dims) > 1:
                raise DataError(f"component {l + 1}: covariate dimension varies across households {sorted(dims)}")
        if self.design.calibration_totals is not None:
            k = len(self.design.calibration_totals)
            if any(r.aux is None or len(r.aux) != k for r in records):
                raise DataError(f"calibration needs {k} auxiliary values on every record")
        object.__setattr__(self, "records", records)

    @property
    def n_components(self) -> int:
        return self.records[0].n_components

    def __len__(self):
        return len(self.records)

    def pattern_counts(self) -> dict:
        counts: dict = {}
        for r in self.records:
            counts[r.pattern] = counts.get(r.pattern, 0) + 1
        return dict(sorted(counts.items()))

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.records])

    @property
    def strata(self) -> np.ndarray:
        return np.array([r.stratum for r in self.records])
