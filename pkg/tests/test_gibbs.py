from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from datasets import small_dataset
from scipy import stats

from wealthineq.censoring import contains_packed
from wealthineq.design_variance import jackknife_variance
from wealthineq.data_model import CensoringEvidence, IsfEvidence, SurveyDataset
from wealthineq.gibbs import (
    ChainConfig,
    ChainError,
    SummaryEvaluator,
    _update_latent,
    compile_dataset,
    init_state,
    run,
    run_chain,
)
from wealthineq.hierarchy import ModelParams
from wealthineq.indices import SummarySpec, WeightedSample, evaluate_summary
from wealthineq.variates import derive_key

SPECS = tuple(SummarySpec.parse(s) for s in ("Gini", "Theil", "Mean", "Median", "P90"))


@pytest.fixture(scope="module")
def dataset():
    return small_dataset(seed=1)


@pytest.fixture(scope="module")
def compiled(dataset):
    return compile_dataset(dataset[0])


def test_init_state_is_admissible(compiled):
    state, n_lp = init_state(compiled)
    assert contains_packed(compiled.packed, state.W).all()
    assert np.all((state.W > 0) == compiled.held)
    for blk in compiled.model.blocks:
        assert np.all(np.linalg.eigvalsh(state.params.sigma[blk.pattern]) > 0)


def test_chain_stays_in_domains(compiled):
    cfg = ChainConfig(total_sweeps=40, burn_in=10, summaries=SPECS, check_domains="every")
    out = run_chain(compiled, cfg)
    assert out.g.shape == (40, len(SPECS))
    assert np.all(np.isfinite(out.g)) and np.all(out.vhat >= 0)
    assert contains_packed(compiled.packed, out.final_state.W).all()
    assert out.coefficients.shape == (40, compiled.model.d)
    np.testing.assert_allclose(out.g, out.ghat + np.sqrt(out.vhat) * out.e[:, None])


def test_ghat_is_plugin_of_final_state(compiled):
    cfg = ChainConfig(total_sweeps=5, burn_in=0, summaries=SPECS)
    out = run_chain(compiled, cfg)
    t = (compiled.shares * out.final_state.W).sum(axis=1)
    s = WeightedSample(t, compiled.weights)
    np.testing.assert_allclose(out.ghat[-1], [evaluate_summary(sp, s) for sp in SPECS], rtol=1e-12)


def test_reproducible_and_order_free(dataset):
    cfg = ChainConfig(total_sweeps=20, burn_in=5, summaries=SPECS, seed=3)
    a = run(dataset[0], cfg)[0]
    b = run(dataset[0], cfg)[0]
    np.testing.assert_array_equal(a.g, b.g)
    shuffled = SurveyDataset(tuple(reversed(dataset[0].records)), dataset[0].design)
    c = run(shuffled, cfg)[0]
    np.testing.assert_array_equal(a.g, c.g)
    d = run(dataset[0], dataclasses.replace(cfg, seed=4))[0]
    assert not np.array_equal(a.g, d.g)


def test_chains_use_distinct_streams(compiled):
    cfg = ChainConfig(total_sweeps=10, burn_in=0, summaries=SPECS, chains=2)
    a, b = run(compiled, cfg)
    assert (a.chain, b.chain) == (0, 1)
    assert not np.array_equal(a.g, b.g)


def test_complete_data_reduction():
    ds, truth = small_dataset(seed=2, point=True)
    data = compile_dataset(ds)
    out = run_chain(data, ChainConfig(total_sweeps=30, burn_in=0, summaries=SPECS))
    t = np.array([truth[i].sum() for i in data.ids])
    plug = [evaluate_summary(sp, WeightedSample(t, data.weights)) for sp in SPECS]
    np.testing.assert_allclose(out.ghat, np.broadcast_to(plug, out.ghat.shape), rtol=1e-12)
    assert np.ptp(out.vhat, axis=0).max() == 0


def test_fast_approx_refreshes_variance(compiled):
    cfg = ChainConfig(total_sweeps=25, burn_in=0, summaries=SPECS, variance_mode="FastApprox", refresh_every=10)
    v = run_chain(compiled, cfg).vhat
    np.testing.assert_array_equal(v[1:10], np.broadcast_to(v[0], (9, len(SPECS))))
    assert not np.array_equal(v[10], v[9])


def test_jackknife_mode_matches_direct_jackknife(compiled):
    cfg = ChainConfig(total_sweeps=3, burn_in=0, summaries=SPECS[:2], variance_mode="Jackknife")
    out = run_chain(compiled, cfg)
    t = (compiled.shares * out.final_state.W).sum(axis=1)
    s = WeightedSample(t, compiled.weights)
    direct = [jackknife_variance(sp, s, compiled.design).value for sp in SPECS[:2]]
    np.testing.assert_allclose(out.vhat[-1], direct, rtol=1e-12)


def test_summary_evaluator_without_summaries(compiled):
    g, v = SummaryEvaluator(compiled, ())(np.ones(compiled.m))
    assert g.size == 0 and v.size == 0


def test_latent_update_is_truncated_normal():
    # one pattern, rectangular brackets: the update of component 1 given
    # component 5 is a truncated normal on the log scale
    ds, _ = small_dataset(seed=3, per_pattern=20, patterns=(8,), tax=False)
    data = compile_dataset(ds)
    state, _ = init_state(data)
    state.params = ModelParams(np.zeros(data.model.d), {8: np.array([[1.0, 0.6], [0.6, 2.0]])})
    W0 = state.W.copy()
    mu = data.model.means(state.params.b)
    k = 0
    y5 = np.log(W0[k, 4])
    cm = mu[k, 0] + 0.6 / 2.0 * (y5 - mu[k, 4])
    csd = np.sqrt(1.0 - 0.36 / 2.0)
    lo, hi = np.log(data.packed.lo[k, 0]), np.log(data.packed.hi[k, 0])
    draws = []
    for n in range(3000):
        state.W = W0.copy()
        state.sweep = n
        _update_latent(state, data, derive_key(11))
        draws.append(np.log(state.W[k, 0]))
    a, b = (lo - cm) / csd, (hi - cm) / csd
    assert stats.kstest(draws, stats.truncnorm(a, b, loc=cm, scale=csd).cdf).pvalue > 0.001


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(total_sweeps=10, burn_in=10)
    with pytest.raises(ValueError):
        ChainConfig(variance_mode="Bootstrap")
    with pytest.raises(ValueError):
        ChainConfig(chains=0)
    assert ChainConfig(summaries=("Gini", "quantile:0.9")).summaries[1].p == 0.9


def test_jointly_inconsistent_evidence_is_a_chain_error():
    # each constraint alone is satisfiable on the box, not both together
    ds, _ = small_dataset(seed=4, per_pattern=6, tax=False)
    rec = ds.records[-1]
    flags = rec.holdings.flags
    bounds = tuple(None if not f else (1.0, 100_000.0) for f in flags)
    bounds = ((1.0, 1e6),) + bounds[1:]
    bad = dataclasses.replace(rec, evidence=CensoringEvidence(bounds, (1e6, np.inf), IsfEvidence(False)))
    ds = SurveyDataset(ds.records[:-1] + (bad,), ds.design)
    data = compile_dataset(ds)
    with pytest.raises(ChainError, match=rec.id):
        init_state(data)
