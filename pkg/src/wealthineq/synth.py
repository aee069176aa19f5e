"""Synthetic populations, samples and censored survey records with known truth.

The generator runs the estimation model forward: holdings pattern,
covariates, then log-wealth from the pattern's multivariate normal. A
stratified sample with oversampling of a priori wealthy strata is drawn,
units fail to respond at random within strata, and each respondent's
wealth is reported through brackets, an overview total and wealth-tax
status built so that the true wealth vector always satisfies them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .censoring import DEFAULT_CAP, TAX_THRESHOLD, RESIDENCE_REBATE
from .data_model import (
    PATTERNS_5,
    CensoringEvidence,
    HouseholdRecord,
    IsfEvidence,
    Population,
    SurveyDataset,
    SurveyDesign,
)
from .design_variance import calibrate, nonresponse_adjust
from .indices import DEFAULT_SUMMARIES, evaluate_summary

# Relative pattern frequencies of a large wealth survey, pattern order 1..8.
PATTERN_SIZES = (658, 984, 837, 147, 3274, 342, 275, 3175)

# Overview-question grid (financial wealth and total wealth).
OVERVIEW_GRID = (0, 3000, 7500, 15_000, 30_000, 45_000, 75_000, 105_000, 150_000,
                 225_000, 300_000, 450_000, np.inf)
CHECKING_GRID = (0, 750, 1500, 3000, 7500, np.inf)
PROPERTY_GRID = (0, 15_000, 30_000, 50_000, 75_000, 100_000, 150_000, 200_000, 300_000,
                 450_000, 750_000, 1_000_000, np.inf)
BUSINESS_GRID = (0, 7500, 15_000, 30_000, 75_000, 150_000, 300_000, 750_000, 1_500_000, np.inf)
REMAINDER_GRID = (0, 1500, 3000, 7500, 15_000, 30_000, 75_000, 150_000, np.inf)
DEFAULT_GRIDS = (OVERVIEW_GRID, PROPERTY_GRID, PROPERTY_GRID, BUSINESS_GRID, REMAINDER_GRID)

OCCUPATIONS = ("self_employed", "executive", "retired", "other")
# Oversampling factors by (rich neighbourhood, occupation).
OVERSAMPLING = {True: (4.0, 3.0, 3.0, 2.0), False: (2.0, 1.5, 1.5, 1.0)}

COVARIATE_NAMES = ("age", "age2", "self_employed", "executive", "retired", "rich")


def _default_coefficients():
    # intercept, age, age^2, self-employed, executive, retired, rich
    return np.array([
        [9.6, 0.30, -0.10, 0.40, 0.60, 0.30, 0.70],
        [11.9, 0.15, -0.05, 0.20, 0.30, 0.10, 0.50],
        [11.3, 0.20, -0.05, 0.30, 0.30, 0.20, 0.50],
        [10.8, 0.10, -0.10, 1.00, 0.20, 0.00, 0.40],
        [9.3, 0.10, -0.05, 0.20, 0.20, 0.10, 0.30],
    ])


def _default_covariance():
    sd = np.array([1.2, 0.6, 0.9, 1.3, 1.0])
    corr = np.full((5, 5), 0.35)
    corr[0, 4] = corr[4, 0] = 0.5
    corr[1, 2] = corr[2, 1] = 0.45
    np.fill_diagonal(corr, 1.0)
    return corr * np.outer(sd, sd)


def _default_effects():
    """Pattern shifts: financial and remainder wealth fall with fewer asset types held."""
    effects = {}
    for i, flags in enumerate(PATTERNS_5, start=1):
        missing = 3 - sum(flags[1:4])
        effects[i] = np.array([-0.15 * missing, 0.0, 0.0, 0.0, -0.1 * missing])
    return effects


@dataclass(frozen=True)
class GeneratorConfig:
    """Settings of a synthetic experiment.

    The defaults give a population of 20,000 households and roughly 2,000
    responding sampled households with five wealth components.
    """

    N: int = 20_000
    sample_size: int = 2700
    component_count: int = 5
    pattern_probs: tuple = tuple(np.array(PATTERN_SIZES) / sum(PATTERN_SIZES))
    coefficients: np.ndarray = field(default_factory=_default_coefficients)
    covariance: np.ndarray = field(default_factory=_default_covariance)
    pattern_effects: dict = field(default_factory=_default_effects)
    design: str = "StratifiedSRS"
    response_rates: tuple = (0.65, 0.8)  # rich, other neighbourhoods
    rich_share: float = 0.2
    point_measures: bool = False
    item_nonresponse: float = 0.05
    point_share: tuple = (0.0, 0.123, 0.178, 0.0, 0.0)
    grids: tuple = DEFAULT_GRIDS
    refine: int = 0
    tax_threshold: float = TAX_THRESHOLD
    isf_missing: float = 0.02
    cap: float = DEFAULT_CAP
    calibration: bool = False
    cluster_size: int = 10

    def __post_init__(self):
        p = np.asarray(self.pattern_probs, dtype=float)
        if p.size != 8 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("pattern_probs must be 8 nonnegative numbers summing to 1")
        try:
            np.linalg.cholesky(np.asarray(self.covariance))
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        if self.component_count not in (4, 5):
            raise ValueError("component_count must be 4 or 5")
        if self.design not in ("SRSWOR", "StratifiedSRS", "UnequalProbFixedSize", "TwoStageCluster"):
            raise ValueError(f"unknown design {self.design!r}")
        if not 0 < self.sample_size <= self.N:
            raise ValueError("sample_size must be in 1..N")


@dataclass
class SyntheticPopulation:
    """A population with the extra quantities needed to simulate tax status."""

    population: Population
    occupation: np.ndarray
    rich: np.ndarray
    debt: np.ndarray
    nd_true: np.ndarray
    taxable_remainder_share: np.ndarray
    patterns: np.ndarray

    @property
    def N(self):
        return self.population.N

    @property
    def taxable(self):
        W, s = self.population.wealth, self.population.shares
        return (W[:, 0] + RESIDENCE_REBATE * s[:, 1] * W[:, 1] + W[:, 2] + self.nd_true
                + self.taxable_remainder_share * W[:, 4] - self.debt)

    def pays_tax(self, threshold: float = TAX_THRESHOLD):
        return self.taxable >= threshold


def _cents(x):
    return np.round(np.asarray(x, dtype=float) * 100.0) / 100.0


def generate_population(config: GeneratorConfig = GeneratorConfig(), rng=None) -> SyntheticPopulation:
    """Draw a synthetic population from the pattern-mixture lognormal model.

    Amounts are rounded to cents and lie in ``[1, cap]`` (households drawing
    outside are redrawn), so every amount is exactly representable in files.
    """
    rng = np.random.default_rng(rng)
    N = config.N
    patterns = rng.choice(8, size=N, p=np.asarray(config.pattern_probs)) + 1
    holdings = np.array(PATTERNS_5)[patterns - 1]
    age = np.clip(rng.normal(50.0, 15.0, N), 20.0, 95.0)
    age_std = (age - 50.0) / 15.0
    rich = rng.random(N) < config.rich_share
    occupation = rng.choice(4, size=N, p=(0.12, 0.15, 0.30, 0.43))
    dummies = np.zeros((N, 3))
    for j in range(3):
        dummies[:, j] = occupation == j
    covs = np.column_stack([age_std, age_std**2, dummies, rich.astype(float)])
    X = np.column_stack([np.ones(N), covs])

    B = np.asarray(config.coefficients)
    Sigma = np.asarray(config.covariance)
    Lc = np.linalg.cholesky(Sigma)
    mu = X @ B.T + np.array([config.pattern_effects[i] for i in patterns])
    logw = mu + rng.standard_normal((N, 5)) @ Lc.T
    lo_log, hi_log = 0.0, np.log(config.cap) - 1.0
    for _ in range(100):
        bad = np.any(((logw < lo_log) | (logw > hi_log)) & (holdings == 1), axis=1)
        if not bad.any():
            break
        logw[bad] = mu[bad] + rng.standard_normal((bad.sum(), 5)) @ Lc.T
    W = np.where(holdings == 1, _cents(np.exp(logw)), 0.0)
    W = np.where(holdings == 1, np.maximum(W, 1.0), 0.0)

    shares = np.ones((N, 5))
    owners = holdings[:, 1] == 1
    shares[owners, 1] = np.where(rng.random(owners.sum()) < 0.8, 1.0, 0.5)

    nd_true = np.where(holdings[:, 3] == 1, _cents(rng.uniform(0.2, 0.6, N) * W[:, 3]), 0.0)
    has_debt = (holdings[:, 1] | holdings[:, 2]).astype(bool) & (rng.random(N) < 0.4)
    debt = np.where(has_debt, _cents(rng.uniform(0.0, 0.3, N) * (shares[:, 1] * W[:, 1] + W[:, 2])), 0.0)
    art = rng.uniform(0.5, 1.0, N)
    strata = np.array([f"{'rich' if r else 'other'}-{OCCUPATIONS[o]}" for r, o in zip(rich, occupation)])
    pop = Population(W, holdings, shares, covs, strata)
    return SyntheticPopulation(pop, occupation, rich, debt, nd_true, art, patterns)


def true_summaries(pop, specs=DEFAULT_SUMMARIES) -> dict:
    """Exact finite-population summary values (direct evaluation)."""
    total = pop.population.total if isinstance(pop, SyntheticPopulation) else pop.total
    return {s.label: evaluate_summary(s, total) for s in specs}


@dataclass
class SampleDraw:
    """Responding sampled units with their final weights."""

    index: np.ndarray  # population indices of respondents
    weights: np.ndarray
    strata: np.ndarray
    psu: Optional[np.ndarray]
    design: SurveyDesign
    n_selected: int


def _allocate(sizes, factors, n):
    raw = n * sizes * factors / np.dot(sizes, factors)
    alloc = np.clip(np.round(raw).astype(int), 2, sizes)
    return alloc


def draw_sample(spop: SyntheticPopulation, config: GeneratorConfig = GeneratorConfig(), rng=None) -> SampleDraw:
    """Select a sample, simulate unit nonresponse and adjust the weights.

    Response is missing at random within the cells rich/other x occupation;
    respondent weights are divided by the observed cell response rate.
    """
    rng = np.random.default_rng(rng)
    N, n = spop.N, config.sample_size
    cells = spop.population.strata
    cell_ids, cell_inv = np.unique(cells, return_inverse=True)
    factor = np.array([OVERSAMPLING[bool(r)][o] for r, o in zip(spop.rich, spop.occupation)])
    psu = None
    strata_sizes = None
    if config.design == "SRSWOR":
        sel = np.sort(rng.choice(N, size=n, replace=False))
        w = np.full(n, N / n)
        stratum = np.full(n, "all")
        strata_sizes = {"all": N}
    elif config.design == "StratifiedSRS":
        sizes = np.bincount(cell_inv)
        fac = np.array([factor[cell_inv == g][0] for g in range(len(cell_ids))])
        alloc = _allocate(sizes, fac, n)
        parts, ws = [], []
        for g in range(len(cell_ids)):
            members = np.flatnonzero(cell_inv == g)
            pick = rng.choice(members, size=alloc[g], replace=False)
            parts.append(pick)
            ws.append(np.full(alloc[g], sizes[g] / alloc[g]))
        sel = np.concatenate(parts)
        w = np.concatenate(ws)
        order = np.argsort(sel)
        sel, w = sel[order], w[order]
        stratum = cells[sel]
        strata_sizes = {str(c): int(s) for c, s in zip(cell_ids, sizes)}
    elif config.design == "UnequalProbFixedSize":
        pi = n * factor / factor.sum()
        if np.any(pi > 1):
            raise ValueError("sample too large for the size measure (inclusion probability above 1)")
        perm = rng.permutation(N)
        cum = np.cumsum(pi[perm])
        points = rng.random() + np.arange(n)
        sel = np.sort(perm[np.searchsorted(cum, points, side="right")])
        w = 1.0 / pi[sel]
        stratum = np.full(len(sel), "all")
    else:
        M = config.cluster_size
        cluster = rng.permutation(N) // M
        n_clusters = int(np.ceil(N / M))
        per = max(2, M // 2)
        n_psu = max(2, n // per)
        chosen = rng.choice(n_clusters, size=n_psu, replace=False)
        parts, ws = [], []
        for c in chosen:
            members = np.flatnonzero(cluster == c)
            k = min(per, len(members))
            parts.append(rng.choice(members, size=k, replace=False))
            ws.append(np.full(k, (n_clusters / n_psu) * len(members) / k))
        sel = np.concatenate(parts)
        w = np.concatenate(ws)
        order = np.argsort(sel)
        sel, w = sel[order], w[order]
        psu = np.array([f"c{cluster[k]}" for k in sel])
        stratum = np.full(len(sel), "all")

    rates = np.where(spop.rich[sel], config.response_rates[0], config.response_rates[1])
    respond = rng.random(len(sel)) < rates
    adj_w, mask = nonresponse_adjust(w, cells[sel], respond)
    calib = None
    if config.calibration:
        aux = np.column_stack([np.ones(mask.sum()), spop.population.covariates[sel[mask], 0]])
        calib = (float(N), float(spop.population.covariates[:, 0].sum()))
        adj_w = calibrate(adj_w, aux, calib)
    design = SurveyDesign(
        kind=config.design,
        strata=strata_sizes,
        calibration_totals=calib,
        response_rates={str(c): float(respond[cells[sel] == c].mean()) for c in np.unique(cells[sel])},
    )
    return SampleDraw(
        sel[mask], adj_w, stratum[mask], None if psu is None else psu[mask], design, len(sel)
    )


def refine_grid(grid, times: int = 1):
    """Insert the geometric (or arithmetic, next to zero) midpoint into every bounded bracket."""
    g = list(grid)
    for _ in range(times):
        out = [g[0]]
        for a, b in zip(g[:-1], g[1:]):
            if np.isfinite(b):
                # cents, so refined brackets round-trip through files exactly
                out.append(float(_cents(np.sqrt(a * b) if a > 0 else b / 2.0)))
            out.append(b)
        g = out
    return tuple(g)


def bracket_of(value: float, grid) -> tuple:
    """The bracket ``[g_j, g_{j+1})`` of ``grid`` containing ``value``."""
    g = np.asarray(grid, dtype=float)
    j = int(np.searchsorted(g, value, side="right")) - 1
    j = min(max(j, 0), len(g) - 2)
    return float(g[j]), float(g[j + 1])


def censor(spop: SyntheticPopulation, sample: SampleDraw, config: GeneratorConfig = GeneratorConfig(),
           rng=None) -> list:
    """Turn sampled true wealth into bracket, overview-total and tax evidence.

    By construction the true wealth vector satisfies every emitted bound.
    """
    rng = np.random.default_rng(rng)
    pop = spop.population
    grids = [refine_grid(g, config.refine) if config.refine else g for g in config.grids]
    total_grid = refine_grid(OVERVIEW_GRID, config.refine) if config.refine else OVERVIEW_GRID
    pays = spop.pays_tax(config.tax_threshold)
    records = []
    for pos, k in enumerate(sample.index):
        flags = tuple(int(f) for f in pop.holdings[k])
        w = pop.wealth[k]
        bounds = []
        for l in range(5):
            if not flags[l]:
                bounds.append(None)
                continue
            if config.point_measures or rng.random() < config.point_share[l]:
                bounds.append((w[l], w[l]))
            elif rng.random() < config.item_nonresponse:
                bounds.append((0.0, np.inf))
            else:
                bounds.append(bracket_of(w[l], grids[l]))
        x = (1.0,) + tuple(pop.covariates[k])
        covs = tuple(x if f else None for f in flags)
        total_bracket = None
        isf = None
        if not config.point_measures:
            if rng.random() >= config.item_nonresponse:
                total_bracket = bracket_of(pop.total[k], total_grid)
            if rng.random() >= config.isf_missing:
                holds_prof = bool(flags[3])
                nd = spop.nd_true[k]
                isf = IsfEvidence(
                    pays_tax=bool(pays[k]),
                    debt=float(spop.debt[k]),
                    nd_min=float(_cents(0.8 * nd)) if holds_prof else 0.0,
                    nd_max=float(_cents(1.25 * nd)) if holds_prof else 0.0,
                    i_flag=1 if holds_prof and nd > 0 else 0,
                )
        records.append(HouseholdRecord(
            id=f"h{k:06d}",
            weight=float(sample.weights[pos]),
            holdings=flags,
            shares=tuple(pop.shares[k]),
            covariates=covs,
            evidence=CensoringEvidence(tuple(bounds), total_bracket, isf),
            stratum=str(sample.strata[pos]),
            psu=None if sample.psu is None else str(sample.psu[pos]),
            aux=(1.0, float(pop.covariates[k, 0])) if config.calibration else None,
        ))
    return records


def _sum_bounds(a, b, s):
    if a is None and b is None:
        return None
    lo = (s * a[0] if a else 0.0) + (b[0] if b else 0.0)
    hi = (s * a[1] if a else 0.0) + (b[1] if b else 0.0)
    return lo, hi


def to_four_components(dataset: SurveyDataset) -> SurveyDataset:
    """Aggregate principal residence (times its share) and other real estate into one component."""
    if dataset.n_components != 5:
        raise ValueError("expected a 5-component dataset")
    out = []
    for r in dataset.records:
        f = r.holdings.flags
        b = r.evidence.component_bounds
        s = r.shares[1]
        re_bounds = _sum_bounds(b[1], b[2], s)
        re_cov = r.covariates[1] if f[1] else r.covariates[2]
        holdings = (1, int(f[1] or f[2]), f[3], 1)
        ev = CensoringEvidence((b[0], re_bounds, b[3], b[4]), r.evidence.total_bracket, r.evidence.isf)
        out.append(replace(
            r,
            holdings=holdings,
            shares=(1.0, 1.0, 1.0, 1.0),
            covariates=(r.covariates[0], re_cov, r.covariates[3], r.covariates[4]),
            evidence=ev,
        ))
    return SurveyDataset(tuple(out), dataset.design)


def four_component_truth(pop: Population) -> np.ndarray:
    """True 4-component wealth matrix of a 5-component population."""
    W, s = pop.wealth, pop.shares
    return np.column_stack([W[:, 0], s[:, 1] * W[:, 1] + W[:, 2], W[:, 3], W[:, 4]])


@dataclass
class SyntheticExperiment:
    population: SyntheticPopulation
    sample: SampleDraw
    dataset: SurveyDataset
    truth: dict


def simulate(config: GeneratorConfig = GeneratorConfig(), seed: int = 0, specs=DEFAULT_SUMMARIES) -> SyntheticExperiment:
    """Population, sample, censored dataset and exact truth from one seed."""
    pop_rng, sample_rng, censor_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    spop = generate_population(config, pop_rng)
    draw = draw_sample(spop, config, sample_rng)
    records = censor(spop, draw, config, censor_rng)
    ds = SurveyDataset(tuple(records), draw.design)
    if config.component_count == 4:
        ds = to_four_components(ds)
    return SyntheticExperiment(spop, draw, ds, true_summaries(spop, specs))
