"""Line-delimited JSON file formats: datasets, truth files, reports and sweep logs.

Currency amounts are stored as integers in minor units (cents); an
unbounded bracket end is ``null``. The first line of every file is a
header carrying the schema name and version.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .censoring import DEFAULT_CAP, TAX_THRESHOLD, build_domain, interior_points, pack_domains
from .data_model import (
    CensoringEvidence,
    DataError,
    HouseholdRecord,
    IsfEvidence,
    SurveyDataset,
    SurveyDesign,
)

DATASET_SCHEMA = "wealthineq.dataset"
SWEEPLOG_SCHEMA = "wealthineq.sweeplog"
REPORT_SCHEMA = "wealthineq.report"
TRUTH_SCHEMA = "wealthineq.truth"
SCHEMA_VERSION = 1
MINOR_UNITS = 100


class IngestError(ValueError):
    """Malformed dataset file; carries the line number, record id and field path."""

    def __init__(self, message, line=None, record=None, path=None):
        self.message, self.line, self.record, self.path = message, line, record, path
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record is not None:
            where.append(f"record {record!r}")
        if path is not None:
            where.append(f"field {path}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def to_minor(x):
    if x is None or (isinstance(x, float) and math.isinf(x)):
        return None
    return int(round(float(x) * MINOR_UNITS))


def from_minor(v, path):
    if v is None:
        return math.inf
    if isinstance(v, bool) or not isinstance(v, int):
        raise IngestError(f"currency amounts must be integers in minor units, got {v!r}", path=path)
    return v / MINOR_UNITS


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


# -- datasets ---------------------------------------------------------------

def _design_to_json(d: SurveyDesign):
    return {
        "kind": d.kind,
        "strata": d.strata,
        "calibration_totals": list(d.calibration_totals) if d.calibration_totals is not None else None,
        "response_rates": d.response_rates,
    }


def record_to_json(r: HouseholdRecord) -> dict:
    ev = r.evidence
    isf = None
    if ev.isf is not None:
        isf = {
            "pays_tax": bool(ev.isf.pays_tax),
            "debt": to_minor(ev.isf.debt),
            "nd_min": to_minor(ev.isf.nd_min),
            "nd_max": to_minor(ev.isf.nd_max),
            "i_flag": int(ev.isf.i_flag),
        }
    return {
        "id": r.id,
        "weight": float(r.weight),
        "stratum": r.stratum,
        "psu": r.psu,
        "holdings": list(r.holdings.flags),
        "shares": [float(s) for s in r.shares],
        "covariates": [list(x) if x is not None else None for x in r.covariates],
        "bounds": [[to_minor(b[0]), to_minor(b[1])] if b is not None else None for b in ev.component_bounds],
        "total_bracket": [to_minor(ev.total_bracket[0]), to_minor(ev.total_bracket[1])]
        if ev.total_bracket is not None else None,
        "isf": isf,
        "aux": list(r.aux) if r.aux is not None else None,
    }


def write_dataset(dataset: SurveyDataset, path) -> str:
    """Write a dataset; returns the SHA-256 of the written bytes."""
    lines = [canonical_json({
        "schema": DATASET_SCHEMA,
        "version": SCHEMA_VERSION,
        "components": dataset.n_components,
        "minor_units": MINOR_UNITS,
        "design": _design_to_json(dataset.design),
    })]
    lines += [canonical_json(record_to_json(r)) for r in dataset.records]
    data = ("\n".join(lines) + "\n").encode()
    Path(path).write_bytes(data)
    return sha256_bytes(data)


_RECORD_FIELDS = {"id", "weight", "stratum", "psu", "holdings", "shares", "covariates", "bounds",
                  "total_bracket", "isf", "aux"}


def _need(obj, key, kind, line, rid):
    if key not in obj:
        raise IngestError("missing field", line, rid, key)
    v = obj[key]
    if kind is not None and not isinstance(v, kind):
        raise IngestError(f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}", line, rid, key)
    return v


def _pair(v, path, line, rid):
    if not isinstance(v, list) or len(v) != 2:
        raise IngestError("expected [lo, hi]", line, rid, path)
    try:
        lo, hi = from_minor(v[0], path), from_minor(v[1], path)
    except IngestError as exc:
        raise IngestError(exc.message, line, rid, path) from None
    if v[0] is None:
        raise IngestError("lower bound cannot be null", line, rid, path)
    if lo > hi:
        raise IngestError(f"lower bound {lo:g} exceeds upper bound {hi:g}", line, rid, path)
    return lo, hi


def parse_record(obj, line) -> HouseholdRecord:
    if not isinstance(obj, dict):
        raise IngestError("record must be a JSON object", line)
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise IngestError("id must be a nonempty string", line, None, "id")
    extra = set(obj) - _RECORD_FIELDS
    if extra:
        raise IngestError(f"unknown fields {sorted(extra)}", line, rid)
    weight = _need(obj, "weight", (int, float), line, rid)
    holdings = _need(obj, "holdings", list, line, rid)
    shares = _need(obj, "shares", list, line, rid)
    covs = _need(obj, "covariates", list, line, rid)
    bounds = _need(obj, "bounds", list, line, rid)
    if len(bounds) != len(holdings):
        raise IngestError(f"expected {len(holdings)} bounds", line, rid, "bounds")
    parsed = []
    for l, b in enumerate(bounds):
        parsed.append(None if b is None else _pair(b, f"bounds[{l}]", line, rid))
    tb = obj.get("total_bracket")
    tb = None if tb is None else _pair(tb, "total_bracket", line, rid)
    isf = obj.get("isf")
    isf_ev = None
    if isf is not None:
        if not isinstance(isf, dict):
            raise IngestError("expected an object", line, rid, "isf")
        try:
            isf_ev = IsfEvidence(
                pays_tax=bool(_need(isf, "pays_tax", bool, line, rid)),
                debt=from_minor(isf.get("debt", 0), "isf.debt"),
                nd_min=from_minor(isf.get("nd_min", 0), "isf.nd_min"),
                nd_max=from_minor(isf.get("nd_max", 0), "isf.nd_max"),
                i_flag=int(isf.get("i_flag", 0)),
            )
        except IngestError as exc:
            raise IngestError(exc.message, line, rid, exc.path or "isf") from None
        except DataError as exc:
            raise IngestError(str(exc), line, rid, "isf") from None
    try:
        return HouseholdRecord(
            id=rid,
            weight=float(weight),
            holdings=tuple(holdings),
            shares=tuple(shares),
            covariates=tuple(tuple(x) if x is not None else None for x in covs),
            evidence=CensoringEvidence(tuple(parsed), tb, isf_ev),
            stratum=str(obj.get("stratum", "0")),
            psu=obj.get("psu"),
            aux=tuple(obj["aux"]) if obj.get("aux") is not None else None,
        )
    except (DataError, TypeError, ValueError) as exc:
        raise IngestError(str(exc), line, rid) from None


def read_dataset(path) -> SurveyDataset:
    """Parse a dataset file; every failure names its line, record and field."""
    text = Path(path).read_bytes()
    try:
        lines = text.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise IngestError(f"not UTF-8 text: {exc}") from None
    if not lines:
        raise IngestError("empty file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid JSON: {exc.msg}", 1) from None
    if not isinstance(header, dict) or header.get("schema") != DATASET_SCHEMA:
        raise IngestError(f"header must declare schema {DATASET_SCHEMA!r}", 1, None, "schema")
    if header.get("version") != SCHEMA_VERSION:
        raise IngestError(f"unsupported schema version {header.get('version')!r}", 1, None, "version")
    if header.get("minor_units", MINOR_UNITS) != MINOR_UNITS:
        raise IngestError(f"minor_units must be {MINOR_UNITS}", 1, None, "minor_units")
    d = header.get("design") or {}
    try:
        design = SurveyDesign(
            kind=d.get("kind", "StratifiedSRS"),
            strata=d.get("strata"),
            calibration_totals=tuple(d["calibration_totals"]) if d.get("calibration_totals") is not None else None,
            response_rates=d.get("response_rates"),
        )
    except DataError as exc:
        raise IngestError(str(exc), 1, None, "design") from None
    records = []
    components = header.get("components")
    for no, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise IngestError(f"invalid JSON: {exc.msg}", no) from None
        rec = parse_record(obj, no)
        if components is not None and rec.n_components != components:
            raise IngestError(
                f"record has {rec.n_components} components but the header declares {components}", no, rec.id, "holdings"
            )
        records.append(rec)
    try:
        return SurveyDataset(tuple(records), design)
    except DataError as exc:
        raise IngestError(str(exc)) from None


def check_domains(dataset: SurveyDataset, cap: float = DEFAULT_CAP, tax_threshold: float = TAX_THRESHOLD):
    """Build every domain and confirm it admits at least one wealth vector."""
    domains = [build_domain(r, tax_threshold, cap) for r in dataset.records]
    ids = [r.id for r in dataset.records]
    W, fallback = interior_points(pack_domains(domains), domains, ids)
    return domains, len(fallback)


# -- truth, reports, sweep logs --------------------------------------------

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_json(obj, path):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_sweep_log(outputs, path, manifest: dict):
    """One line per sweep and summary: chain, n, label, g_hat, v_hat, e, g."""
    with open(path, "w") as fh:
        fh.write(canonical_json({"schema": SWEEPLOG_SCHEMA, "version": SCHEMA_VERSION,
                                 "manifest": _clean(manifest)}) + "\n")
        for out in outputs:
            for n in range(out.T):
                e = float(out.e[n])
                for j, label in enumerate(out.labels):
                    fh.write(canonical_json({
                        "chain": out.chain, "n": n + 1, "summary": label,
                        "ghat": float(out.ghat[n, j]), "vhat": float(out.vhat[n, j]),
                        "e": e, "g": float(out.g[n, j]),
                    }) + "\n")


def read_sweep_log(path):
    """Returns ``(header, {(chain, label): dict of arrays})``."""
    series = {}
    with open(path) as fh:
        header = json.loads(fh.readline())
        for raw in fh:
            r = json.loads(raw)
            s = series.setdefault((r["chain"], r["summary"]), {"n": [], "ghat": [], "vhat": [], "e": [], "g": []})
            for k in s:
                s[k].append(r[k])
    return header, {k: {f: np.array(v) for f, v in d.items()} for k, d in series.items()}


def write_running_means(outputs, path):
    """CSV of running means of ``g`` per chain and summary (plot-ready)."""
    with open(path, "w") as fh:
        cols = [f"chain{o.chain}:{lab}" for o in outputs for lab in o.labels]
        fh.write("n," + ",".join(cols) + "\n")
        rms = [np.cumsum(o.g, axis=0) / np.arange(1, o.T + 1)[:, None] for o in outputs]
        T = min(o.T for o in outputs)
        for n in range(T):
            fh.write(f"{n + 1}," + ",".join(repr(float(v)) for rm in rms for v in rm[n]) + "\n")
