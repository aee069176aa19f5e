from __future__ import annotations

import json

import numpy as np
import pytest

from wealthineq.censoring import build_domain
from wealthineq.io import (
    IngestError,
    canonical_json,
    check_domains,
    file_hash,
    from_minor,
    read_dataset,
    read_sweep_log,
    record_to_json,
    to_minor,
    write_dataset,
    write_sweep_log,
)
from wealthineq.synth import GeneratorConfig, simulate, to_four_components

from datasets import small_dataset


@pytest.fixture(scope="module")
def synthetic():
    return simulate(GeneratorConfig(N=3000, sample_size=300), seed=11).dataset


def lines_of(path):
    return path.read_text().splitlines()


def rewrite(path, lines):
    path.write_text("\n".join(lines) + "\n")


def test_minor_units():
    assert to_minor(12.34) == 1234
    assert to_minor(np.inf) is None
    assert from_minor(None, "x") == np.inf
    assert from_minor(1234, "x") == 12.34
    with pytest.raises(IngestError, match="minor units"):
        from_minor(12.5, "bounds[0]")


def test_round_trip_preserves_records_and_domains(tmp_path, synthetic):
    path = tmp_path / "d.jsonl"
    h = write_dataset(synthetic, path)
    assert h == file_hash(path)
    back = read_dataset(path)
    assert back.records == synthetic.records
    for a, b in zip(synthetic.records[:100], back.records[:100]):
        da, db = build_domain(a), build_domain(b)
        np.testing.assert_array_equal(da.lo, db.lo)
        np.testing.assert_array_equal(da.hi, db.hi)
    assert write_dataset(back, tmp_path / "e.jsonl") == h


def test_round_trip_small_dataset(tmp_path):
    ds, _ = small_dataset(0, per_pattern=4)
    write_dataset(ds, tmp_path / "s.jsonl")
    assert read_dataset(tmp_path / "s.jsonl").records == ds.records


def test_reversed_bracket_names_line_and_field(tmp_path, synthetic):
    path = tmp_path / "d.jsonl"
    write_dataset(synthetic, path)
    lines = lines_of(path)
    obj = json.loads(lines[3])
    l = next(i for i, b in enumerate(obj["bounds"]) if b is not None and b[1] is not None)
    obj["bounds"][l] = [obj["bounds"][l][1] + 100, obj["bounds"][l][1]]
    lines[3] = canonical_json(obj)
    rewrite(path, lines)
    with pytest.raises(IngestError) as info:
        read_dataset(path)
    err = info.value
    assert err.line == 4 and err.record == obj["id"] and err.path == f"bounds[{l}]"
    assert str(err).startswith(f"line 4, record '{obj['id']}', field bounds[{l}]: lower bound")


def test_fractional_currency_is_rejected(tmp_path, synthetic):
    path = tmp_path / "d.jsonl"
    write_dataset(synthetic, path)
    lines = lines_of(path)
    obj = json.loads(lines[1])
    obj["total_bracket"] = [1000.5, 2000]
    lines[1] = canonical_json(obj)
    rewrite(path, lines)
    with pytest.raises(IngestError, match="line 2.*field total_bracket: currency") as info:
        read_dataset(path)
    assert str(info.value).count("field") == 1


@pytest.mark.parametrize("header, field", [
    ({"schema": "other", "version": 1}, "schema"),
    ({"schema": "wealthineq.dataset", "version": 99}, "version"),
    ({"schema": "wealthineq.dataset", "version": 1, "minor_units": 1000}, "minor_units"),
])
def test_bad_header(tmp_path, synthetic, header, field):
    path = tmp_path / "d.jsonl"
    write_dataset(synthetic, path)
    lines = lines_of(path)
    lines[0] = json.dumps(header)
    rewrite(path, lines)
    with pytest.raises(IngestError) as info:
        read_dataset(path)
    assert info.value.line == 1 and info.value.path == field


def test_unknown_field_and_bad_json(tmp_path, synthetic):
    path = tmp_path / "d.jsonl"
    write_dataset(synthetic, path)
    lines = lines_of(path)
    obj = json.loads(lines[2])
    obj["colour"] = "red"
    rewrite(path, lines[:2] + [canonical_json(obj)])
    with pytest.raises(IngestError, match="unknown fields"):
        read_dataset(path)
    rewrite(path, lines[:2] + ["{not json"])
    with pytest.raises(IngestError, match="line 3: invalid JSON"):
        read_dataset(path)


def test_mixed_component_counts_rejected(tmp_path, synthetic):
    path = tmp_path / "d.jsonl"
    write_dataset(synthetic, path)
    lines = lines_of(path)
    four = to_four_components(synthetic)
    lines[1] = canonical_json(record_to_json(four.records[0]))
    rewrite(path, lines)
    with pytest.raises(IngestError, match="header declares 5"):
        read_dataset(path)


def test_lower_bound_cannot_be_null(tmp_path, synthetic):
    rec = record_to_json(synthetic.records[0])
    rec["total_bracket"] = [None, None]
    path = tmp_path / "d.jsonl"
    write_dataset(synthetic, path)
    lines = lines_of(path)
    lines[1] = canonical_json(rec)
    rewrite(path, lines)
    with pytest.raises(IngestError, match="lower bound cannot be null"):
        read_dataset(path)


def test_check_domains_accepts_synthetic(synthetic):
    domains, n_fallback = check_domains(synthetic)
    assert len(domains) == len(synthetic)
    assert n_fallback >= 0


def test_sweep_log_round_trip(tmp_path):
    from wealthineq.gibbs import ChainConfig, run
    ds, _ = small_dataset(1, per_pattern=6)
    out = run(ds, ChainConfig(total_sweeps=12, burn_in=2, seed=3, summaries=("Gini", "Mean")))
    write_sweep_log(out, tmp_path / "s.jsonl", {"seed": 3})
    header, series = read_sweep_log(tmp_path / "s.jsonl")
    assert header["manifest"] == {"seed": 3}
    s = series[(0, "Gini")]
    np.testing.assert_array_equal(s["n"], np.arange(1, 13))
    np.testing.assert_array_equal(s["g"], out[0].g[:, 0])
    np.testing.assert_allclose(s["g"], s["ghat"] + np.sqrt(s["vhat"]) * s["e"], rtol=1e-12)
