"""Acceptance criteria, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the
measured quantity next to its threshold; the lines are repeated in the
terminal summary. Criteria 9 to 11 run the full sampler on the default
synthetic configuration and take about half an hour together.
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest
from scipy import stats

from wealthineq.censoring import build_domain, contains, contains_packed, pack_domains
from wealthineq.design_variance import (
    LinearizedSample,
    SampleDesign,
    ht_total,
    ht_variance,
    jackknife_variance,
    linearize,
)
from wealthineq.gibbs import ChainConfig, compile_dataset, run
from wealthineq.hierarchy import coefficient_full_conditional
from wealthineq.indices import (
    SummarySpec,
    WeightedSample,
    atkinson,
    evaluate_summary,
    gini_pairwise,
    gini_weighted,
    theil,
)
from wealthineq.inference import batch_means_se, summarize
from wealthineq.synth import (
    GeneratorConfig,
    SampleDraw,
    censor,
    generate_population,
    simulate,
    to_four_components,
)
from wealthineq.variates import truncated_normal, wishart

from conftest import record_acceptance
from datasets import small_dataset
from domain_cases import random_domain
from test_censoring import grid_oracle
from test_variates import KS_CASES

GINI = SummarySpec.parse("Gini")
ORACLE_SUMMARIES = ("Gini", "Theil", "Atkinson(1.5)")


def verdict(n, ok, detail):
    line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    record_acceptance(line)
    assert ok, line


# -- shared long runs --------------------------------------------------------

_RUNS = {}


def oracle_run(seed, components=5, T=5000, B=1000, chain_seed=0):
    """Default synthetic dataset of ``seed`` through the sampler; cached."""
    key = (seed, components, T, B, chain_seed)
    if key not in _RUNS:
        ex = _experiment(seed)
        ds = ex.dataset if components == 5 else to_four_components(ex.dataset)
        cfg = ChainConfig(total_sweeps=T, burn_in=B, seed=chain_seed, summaries=ORACLE_SUMMARIES,
                          record_params=False)
        _RUNS[key] = run(ds, cfg)[0]
    return _RUNS[key]


_EXPERIMENTS = {}


def _experiment(seed):
    if seed not in _EXPERIMENTS:
        _EXPERIMENTS[seed] = simulate(GeneratorConfig(), seed=seed)
    return _EXPERIMENTS[seed]


# -- 1 to 3: index oracles ---------------------------------------------------

def test_gini_matches_pairwise_oracle():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        N = int(rng.integers(1, 201))
        t = rng.lognormal(10, rng.uniform(0.2, 2.0), N)
        w = rng.uniform(0.5, 20, N) if rng.random() < 0.5 else None
        worst = max(worst, abs(gini_weighted(t, w) - gini_pairwise(t, w)))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-12 and elapsed < 10,
            f"Gini vs pairwise oracle: max |diff| {worst:.2e} (<= 1e-12), {elapsed:.1f} s (< 10 s)")


def theil_decomposition(t, groups):
    """Within-group plus between-group Theil, both weighted by wealth shares."""
    mu = t.mean()
    within = between = 0.0
    for g in np.unique(groups):
        tg = t[groups == g]
        share = tg.sum() / t.sum()
        within += share * theil(tg)
        between += share * np.log(tg.mean() / mu)
    return within + between


def test_theil_decomposes_exactly():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(10, 400))
        t = rng.lognormal(10, rng.uniform(0.3, 2.0), N)
        groups = rng.integers(0, int(rng.integers(2, 8)), N)
        worst = max(worst, abs(theil(t) - theil_decomposition(t, groups)))
    verdict(2, worst <= 1e-10, f"Theil within + between: max |diff| {worst:.2e} (<= 1e-10) on 100 partitions")


def test_indices_are_scale_invariant():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        t = rng.lognormal(10, rng.uniform(0.2, 2.0), int(rng.integers(2, 300)))
        w = rng.uniform(1, 10, t.size)
        for f in (lambda x: gini_weighted(x, w), lambda x: theil(x, w),
                  lambda x: atkinson(x, 0.5, w), lambda x: atkinson(x, 1.0, w),
                  lambda x: atkinson(x, 1.5, w), lambda x: atkinson(x, 2.0, w)):
            base = f(t)
            for c in (1e-6, 1.0, 1e6):
                worst = max(worst, abs(f(c * t) - base) / abs(base))
    verdict(3, worst <= 1e-12, f"Gini/Theil/Atkinson under scaling by 1e-6, 1, 1e6: max rel diff {worst:.2e} (<= 1e-12)")


# -- 4, 5: design-based variance ---------------------------------------------

def _enumerate(y, strata, n_h):
    """Every stratified SRSWOR sample: HT totals and their variance estimates."""
    y = np.asarray(y, float)
    labels = np.unique(strata)
    per = [list(itertools.combinations(np.flatnonzero(strata == h), n_h[h])) for h in labels]
    sizes = {h: int(np.sum(strata == h)) for h in labels}
    totals, estimates = [], []
    for combo in itertools.product(*per):
        idx = np.concatenate([np.array(c) for c in combo])
        w = np.array([sizes[strata[k]] / n_h[strata[k]] for k in idx])
        d = SampleDesign("StratifiedSRS", strata=strata[idx], stratum_sizes=sizes)
        totals.append(ht_total(y[idx], w))
        estimates.append(ht_variance(LinearizedSample(y[idx], w, d)).value)
    return np.array(totals), np.array(estimates)


def test_ht_matches_enumeration():
    start = time.perf_counter()
    cases = [
        ([1, 2, 3, 4], np.zeros(4, int), {0: 2}),
        ([3.5, -1, 7, 2.25, 0, 11], np.zeros(6, int), {0: 3}),
        ([1, 2, 3, 4, 10, 20, 30, 40], np.array([0] * 4 + [1] * 4), {0: 2, 1: 3}),
        ([5, 1, 9, 2, 8, 3, 7], np.array([0, 0, 0, 1, 1, 1, 1]), {0: 2, 1: 2}),
    ]
    worst = 0.0
    first_var = None
    for y, strata, n_h in cases:
        totals, est = _enumerate(y, strata, n_h)
        scale = max(1.0, totals.var())
        worst = max(worst, abs(totals.mean() - sum(y)) / scale, abs(est.mean() - totals.var()) / scale)
        first_var = totals.var() if first_var is None else first_var
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and abs(first_var - 40 / 6) < 1e-12 and elapsed < 1
    verdict(4, ok, f"HT mean/variance vs enumeration: max rel diff {worst:.1e}, N=4 n=2 variance "
                   f"{first_var:.12f} (40/6), {elapsed:.2f} s (< 1 s)")


def test_gini_linearization_vs_jackknife_and_monte_carlo():
    start = time.perf_counter()
    pop = generate_population(GeneratorConfig(), np.random.default_rng(0)).population.total
    N = pop.size
    rng = np.random.default_rng(5)
    parts, ok = [], True
    for n in (200, 500):
        d = SampleDesign("SRSWOR", stratum_sizes={0: N})
        est, lin, jk = [], [], []
        for _ in range(2000):
            s = WeightedSample(pop[rng.choice(N, n, replace=False)], np.full(n, N / n))
            est.append(gini_weighted(s))
            lin.append(ht_variance(linearize(GINI, s, d)).value)
            jk.append(jackknife_variance(GINI, s, d).value)
        r_jk = np.mean(lin) / np.mean(jk)
        r_mc = np.mean(lin) / np.var(est, ddof=1)
        ok &= abs(r_jk - 1) < 0.15 and abs(r_mc - 1) < 0.15
        parts.append(f"n={n}: lin/jk {r_jk:.3f}, lin/MC {r_mc:.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    verdict(5, ok, f"Gini linearization within 15%: {'; '.join(parts)}; {elapsed:.0f} s (< 300 s)")


# -- 6: variates ---------------------------------------------------------------

def test_variate_kernels():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    failed = []
    for mu, sd, lo, hi in KS_CASES:
        x = truncated_normal(np.full(20_000, mu), sd, lo, hi, rng)
        a, b = (lo - mu) / sd, (hi - mu) / sd
        inside = np.all((x >= lo) & (x <= hi))
        if not inside or stats.kstest(x, stats.truncnorm(a, b, loc=mu, scale=sd).cdf).pvalue <= 0.001:
            failed.append((mu, sd, lo, hi))
    V = np.array([[1.0, 0.3, 0.0], [0.3, 2.0, 0.5], [0.0, 0.5, 1.5]])
    df = 7
    draws = np.array([wishart(df, V, rng) for _ in range(20_000)])
    z = np.abs(draws.mean(axis=0) - df * V) / (draws.std(axis=0) / np.sqrt(len(draws)))
    elapsed = time.perf_counter() - start
    ok = not failed and z.max() < 3 and elapsed < 120
    verdict(6, ok, f"truncated normal KS: {len(KS_CASES) - len(failed)}/{len(KS_CASES)} pass at 0.001; "
                   f"Wishart mean max {z.max():.2f} se (< 3); {elapsed:.0f} s (< 120 s)")


# -- 7, 8: complete-data checks ------------------------------------------------

def test_conjugate_conditionals_on_complete_data():
    """Each coefficient draw averages to its GLS mean and each covariance draw
    to its inverse-Wishart mean, both given the preceding state of the chain."""
    start = time.perf_counter()
    ds, truth = small_dataset(seed=7, per_pattern=60, point=True)
    data = compile_dataset(ds)
    model = data.model
    W = np.array([truth[i] for i in data.ids])
    Y = np.log(np.where(W > 0, W, 1.0))  # unheld columns are never read
    T = 3000
    out = run(ds, ChainConfig(total_sweeps=T, burn_in=0, seed=3, summaries=("Gini",)))[0]
    pats = [blk.pattern for blk in model.blocks]
    gls, b_diff, s_diff = [], [], []
    for t in range(1, T):
        sig = {i: out.sigmas[i][t - 1] for i in pats}
        gls_t = model.original_coefficients(coefficient_full_conditional(model, Y, sig).mean)
        b_diff.append(out.coefficients[t] - gls_t)
        b_std = model.standardized_coefficients(out.coefficients[t])
        row = []
        for blk in model.blocks:
            S = model.residual_matrix(blk, Y, b_std)
            row.append((out.sigmas[blk.pattern][t] - S / (blk.m - blk.p - 1))[np.triu_indices(blk.p)])
        s_diff.append(np.concatenate(row))
    z_b = np.abs(np.mean(b_diff, axis=0)) / (np.std(b_diff, axis=0) / np.sqrt(T - 1))
    s_diff = np.array(s_diff)
    z_s = np.abs(s_diff.mean(axis=0)) / np.array([batch_means_se(c) for c in s_diff.T])
    elapsed = time.perf_counter() - start
    ok = z_b.max() < 3 and z_s.max() < 3 and elapsed < 120
    verdict(7, ok, f"complete data, {z_b.size} coefficients and {z_s.size} covariance entries: "
                   f"max {z_b.max():.2f} and {z_s.max():.2f} MC se from conjugate means (< 3); {elapsed:.0f} s (< 120 s)")


def test_complete_data_reduction():
    ex = simulate(GeneratorConfig(point_measures=True), seed=8)
    T = 2000
    out = run(ex.dataset, ChainConfig(total_sweeps=T, burn_in=200, seed=1))[0]
    rows = summarize(out)
    data = compile_dataset(ex.dataset)
    # household wealth weights each observed amount by the household's share of it
    records = sorted(ex.dataset.records, key=lambda r: r.id)
    amounts = np.array([[b[0] if b is not None else 0.0 for b in r.evidence.component_bounds] for r in records])
    totals = (np.array([r.shares for r in records]) * amounts).sum(axis=1)

    worst_mean, worst_sd = 0.0, 0.0
    for j, r in enumerate(rows):
        plug = evaluate_summary(out.summaries[j], WeightedSample(totals, data.weights))
        worst_mean = max(worst_mean, abs(r.mean - plug))
        g = out.g[out.config.burn_in:, j]
        v = out.vhat[out.config.burn_in:, j]
        sd, target = g.std(ddof=1), np.sqrt(v[0])
        # sd of a sample standard deviation of n normal draws
        se = target / np.sqrt(2 * (g.size - 1))
        worst_sd = max(worst_sd, abs(sd - target) / se)
    ok = worst_mean <= 1e-10 and worst_sd < 3
    verdict(8, ok, f"point measures, {len(rows)} summaries: max |prediction - plug-in| {worst_mean:.1e} (<= 1e-10); "
                   f"posterior sd vs sqrt(vhat) max {worst_sd:.2f} MC se (< 3)")


# -- 9 to 11: end-to-end oracle runs -------------------------------------------

REPLICATES = 20


@pytest.mark.slow
def test_end_to_end_oracle():
    start = time.perf_counter()
    cover = dict.fromkeys(ORACLE_SUMMARIES, 0)
    errors = []
    for seed in range(REPLICATES):
        ex = _experiment(seed)
        rows = {r.label: r for r in summarize(oracle_run(seed))}
        errors.append(abs(rows["Gini"].mean - ex.truth["Gini"]))
        for label in ORACLE_SUMMARIES:
            cover[label] += rows[label].lower <= ex.truth[label] <= rows[label].upper
    elapsed = time.perf_counter() - start
    ok = max(errors) <= 0.03 and min(cover.values()) >= 14
    cov = ", ".join(f"{k} {v}/{REPLICATES}" for k, v in cover.items())
    verdict(9, ok, f"default config, T=5000 B=1000: max |Gini prediction - truth| {max(errors):.4f} (<= 0.03); "
                   f"90% coverage {cov} (>= 14); {elapsed / 60:.1f} min (< 30 min)")


@pytest.mark.slow
def test_seed_and_burn_in_stability():
    a = oracle_run(0, T=20_000, B=1000, chain_seed=0)
    b = oracle_run(0, T=20_000, B=1000, chain_seed=1)
    pa, pb = summarize(a)[0].mean, summarize(b)[0].mean
    late = summarize(a, burn_in=19_000)[0].mean
    ok = abs(pa - pb) < 0.005 and abs(pa - late) < 1e-3
    verdict(10, ok, f"T=20000: Gini seeds 0 vs 1 differ {abs(pa - pb):.5f} (< 0.005); "
                    f"B=1000 vs B=19000 differ {abs(pa - late):.5f} (< 0.001)")


@pytest.mark.slow
def test_four_component_aggregation():
    five = summarize(oracle_run(0))[0].mean
    four = summarize(oracle_run(0, components=4))[0].mean
    verdict(11, abs(five - four) < 0.01,
            f"Gini prediction 5 components {five:.4f} vs 4 components {four:.4f}: "
            f"diff {abs(five - four):.4f} (< 0.01)")


# -- 12: domains ---------------------------------------------------------------

def test_domain_engine():
    rng = np.random.default_rng(12)
    bad = capped = 0
    for _ in range(1000):
        dom, w0 = random_domain(rng)
        capped += any(np.isfinite(c.cap).any() for c in dom.constraints)
        if not contains(dom, w0) or not all(grid_oracle(dom, w0, l, rng, n=60) for l in np.flatnonzero(dom.held)):
            bad += 1
    cfg = GeneratorConfig(N=100_000)
    spop = generate_population(cfg, np.random.default_rng(13))
    N = spop.N
    census = SampleDraw(np.arange(N), np.ones(N), spop.population.strata, None, None, N)
    records = censor(spop, census, cfg, np.random.default_rng(14))
    packed = pack_domains([build_domain(r) for r in records])
    inside = contains_packed(packed, spop.population.wealth)
    ok = bad == 0 and capped > 0 and inside.all()
    verdict(12, ok, f"grid oracle {1000 - bad}/1000 domains ({capped} with capped terms); "
                    f"true vectors inside {int(inside.sum())}/{N}")
