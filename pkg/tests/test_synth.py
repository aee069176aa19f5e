from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from scipy import stats

from wealthineq.censoring import build_domain, contains
from wealthineq.data_model import pattern_index
from wealthineq.design_variance import ht_total
from wealthineq.indices import gini_population
from wealthineq.synth import (
    CHECKING_GRID,
    OVERSAMPLING,
    GeneratorConfig,
    SampleDraw,
    bracket_of,
    censor,
    draw_sample,
    four_component_truth,
    generate_population,
    refine_grid,
    simulate,
    to_four_components,
)

SMALL = GeneratorConfig(N=4000, sample_size=600)


@pytest.fixture(scope="module")
def spop():
    return generate_population(SMALL, np.random.default_rng(0))


def whole_population(spop):
    N = spop.N
    return SampleDraw(np.arange(N), np.ones(N), spop.population.strata, None, None, N)  # census, no design needed


def test_population_is_reproducible(spop):
    again = generate_population(SMALL, np.random.default_rng(0))
    np.testing.assert_array_equal(again.population.wealth, spop.population.wealth)


def test_amounts_are_cents_within_range(spop):
    W = spop.population.wealth[spop.population.holdings == 1]
    assert W.min() >= 1.0 and W.max() <= SMALL.cap
    np.testing.assert_allclose(np.round(W * 100), W * 100, rtol=0, atol=1e-6)


def test_pattern_shares_match_probabilities():
    cfg = dataclasses.replace(SMALL, N=20_000)
    sp = generate_population(cfg, np.random.default_rng(1))
    counts = np.bincount(sp.patterns, minlength=9)[1:]
    assert stats.chisquare(counts, cfg.N * np.asarray(cfg.pattern_probs)).pvalue > 0.001
    assert all(pattern_index(h) == i for h, i in zip(sp.population.holdings[:50], sp.patterns[:50]))


def test_degenerate_model_gives_unit_amounts():
    cfg = dataclasses.replace(
        SMALL, coefficients=np.zeros((5, 7)), covariance=1e-14 * np.eye(5),
        pattern_effects={i: np.zeros(5) for i in range(1, 9)},
    )
    sp = generate_population(cfg, np.random.default_rng(2))
    held = sp.population.holdings == 1
    np.testing.assert_array_equal(sp.population.wealth[held], 1.0)


def test_bracket_lookup():
    assert bracket_of(800, CHECKING_GRID) == (750, 1500)
    assert bracket_of(750, CHECKING_GRID) == (750, 1500)
    assert bracket_of(1e9, CHECKING_GRID) == (7500, np.inf)


def test_refined_grid_nests_and_stays_in_cents():
    g = refine_grid(CHECKING_GRID, 2)
    assert set(CHECKING_GRID) <= set(g)
    assert len(g) == 4 * (len(CHECKING_GRID) - 2) + 2
    finite = np.array([x for x in g if np.isfinite(x)])
    np.testing.assert_allclose(np.round(finite * 100), finite * 100, rtol=0, atol=1e-6)


def test_true_vectors_lie_in_their_domains(spop):
    records = censor(spop, whole_population(spop), SMALL, np.random.default_rng(3))
    W = spop.population.wealth
    assert all(contains(build_domain(r), W[k]) for k, r in enumerate(records))


def test_true_vectors_lie_in_four_component_domains(spop):
    from wealthineq.data_model import SurveyDataset
    records = censor(spop, whole_population(spop), SMALL, np.random.default_rng(4))
    ds4 = to_four_components(SurveyDataset(tuple(records)))
    W4 = four_component_truth(spop.population)
    assert ds4.n_components == 4
    assert all(contains(build_domain(r), W4[k]) for k, r in enumerate(ds4.records))
    np.testing.assert_allclose(W4.sum(axis=1), spop.population.total)


def test_point_measure_mode(spop):
    cfg = dataclasses.replace(SMALL, point_measures=True)
    records = censor(spop, whole_population(spop), cfg, np.random.default_rng(5))
    for r in records[:200]:
        assert r.evidence.total_bracket is None and r.evidence.isf is None
        assert all(b is None or b[0] == b[1] for b in r.evidence.component_bounds)


def test_srswor_weights(spop):
    cfg = dataclasses.replace(SMALL, design="SRSWOR", response_rates=(1.0, 1.0))
    d = draw_sample(spop, cfg, np.random.default_rng(6))
    np.testing.assert_allclose(d.weights, spop.N / cfg.sample_size)
    cfg = dataclasses.replace(SMALL, design="SRSWOR")
    d = draw_sample(spop, cfg, np.random.default_rng(6))
    assert d.weights.sum() == pytest.approx(spop.N)


def test_oversampling_factor(spop):
    d = draw_sample(spop, dataclasses.replace(SMALL, response_rates=(1.0, 1.0)), np.random.default_rng(7))
    cells = spop.population.strata
    rate = {c: np.mean(d.strata == c) * len(d.index) / np.sum(cells == c) for c in np.unique(cells)}
    top, base = rate["rich-self_employed"], rate["other-other"]
    assert OVERSAMPLING[True][0] == 4.0
    assert top / base == pytest.approx(4.0, rel=0.1)


@pytest.mark.parametrize("design", ["SRSWOR", "StratifiedSRS", "UnequalProbFixedSize", "TwoStageCluster"])
def test_ht_total_is_unbiased(design):
    cfg = GeneratorConfig(N=1500, sample_size=150, design=design, response_rates=(1.0, 1.0))
    sp = generate_population(cfg, np.random.default_rng(8))
    y = sp.population.covariates[:, 0] + 3.0
    rng = np.random.default_rng(9)
    est = [ht_total(y[d.index], d.weights) for d in (draw_sample(sp, cfg, rng) for _ in range(1500))]
    se = np.std(est) / np.sqrt(len(est))
    assert abs(np.mean(est) - y.sum()) < 4 * se


def test_default_config_arithmetic():
    cfg = GeneratorConfig()
    assert cfg.N == 20_000
    ex = simulate(cfg, seed=1)
    assert ex.population.N == 20_000
    assert 1700 <= len(ex.dataset) <= 2300
    assert ex.truth["Gini"] == gini_population(ex.population.population.total)


def test_simulate_is_seeded():
    a = simulate(SMALL, seed=2)
    b = simulate(SMALL, seed=2)
    c = simulate(SMALL, seed=3)
    assert a.dataset.records == b.dataset.records
    assert a.dataset.records != c.dataset.records


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(pattern_probs=(1.0,) * 8)
    with pytest.raises(ValueError):
        GeneratorConfig(design="Bernoulli")
    with pytest.raises(ValueError):
        GeneratorConfig(N=10, sample_size=20)
