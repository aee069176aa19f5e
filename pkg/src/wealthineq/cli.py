"""Command line: ingest, estimate, simulate, validate.

Exit codes: 0 success, 1 validation table has failing rows, 2 usage,
3 invalid input, 4 infeasible domain, 5 runtime failure, 6 hash mismatch.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .censoring import DEFAULT_CAP, TAX_THRESHOLD, InfeasibleDomainError
from .data_model import DataError
from .gibbs import VARIANCE_MODES, ChainConfig, ChainError, compile_dataset, run
from .hierarchy import IdentificationError, PatternSizeError
from .indices import DEFAULT_SUMMARIES, SummarySpec
from .inference import DEFAULT_ALPHA, summarize
from .io import (
    REPORT_SCHEMA,
    SCHEMA_VERSION,
    TRUTH_SCHEMA,
    IngestError,
    canonical_json,
    check_domains,
    file_hash,
    read_dataset,
    read_json,
    sha256_bytes,
    write_dataset,
    write_json,
    write_running_means,
    write_sweep_log,
)
from .synth import GeneratorConfig, simulate, to_four_components

OUTPUT_ENV = "WEALTHINEQ_OUTPUT_DIR"

EXIT_OK = 0
EXIT_FAILED_CHECKS = 1
EXIT_INVALID = 3
EXIT_INFEASIBLE = 4
EXIT_RUNTIME = 5
EXIT_HASH = 6


class HashMismatch(RuntimeError):
    pass


def _out_dir(arg) -> Path:
    d = Path(os.environ.get(OUTPUT_ENV) or arg or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _parse_summaries(text):
    if not text:
        return DEFAULT_SUMMARIES
    return tuple(SummarySpec.parse(s) for s in text.split(","))


def _load(path, components):
    ds = read_dataset(path)
    if components == 4 and ds.n_components == 5:
        ds = to_four_components(ds)
    elif components is not None and components != ds.n_components:
        raise IngestError(f"cannot turn a {ds.n_components}-component dataset into {components} components")
    return ds


# -- subcommands -----------------------------------------------------------

def cmd_ingest(args) -> int:
    ds = _load(args.dataset, args.components)
    _, n_lp = check_domains(ds, args.cap, args.tax_threshold)
    print(f"{len(ds)} households, {ds.n_components} components, design {ds.design.kind}")
    print("pattern counts: " + ", ".join(f"{i}:{c}" for i, c in ds.pattern_counts().items()))
    print(f"all domains feasible ({n_lp} needed the LP interior point)")
    print(f"sha256 {file_hash(args.dataset)}")
    return EXIT_OK


def run_manifest(args, specs, dataset_hash, components) -> dict:
    config = {
        "iterations": args.iterations,
        "burn_in": args.burn_in,
        "chains": args.chains,
        "alpha": args.alpha,
        "summaries": [s.label for s in specs],
        "variance_mode": args.variance_mode,
        "cap": args.cap,
        "tax_threshold": args.tax_threshold,
        "components": components,
    }
    return {
        "config": config,
        "config_hash": sha256_bytes(canonical_json(config).encode()),
        "seed": args.seed,
        "dataset_hash": dataset_hash,
        "version": __version__,
        "variance_mode": args.variance_mode,
        "cap": args.cap,
        "methods": {
            "quantile": "left-continuous inverse of the weighted CDF",
            "region": "equal-tailed empirical quantiles of the draws",
            "prediction": "mean of the per-sweep plug-in values after burn-in",
            "variance_cadence": (f"every {ChainConfig.refresh_every} sweeps" if args.variance_mode == "FastApprox"
                                 else "every sweep"),
        },
    }


def cmd_estimate(args) -> int:
    specs = _parse_summaries(args.summaries)
    ds = _load(args.dataset, args.components)
    config = ChainConfig(
        total_sweeps=args.iterations, burn_in=args.burn_in, seed=args.seed, chains=args.chains,
        summaries=specs, variance_mode=args.variance_mode, cap=args.cap, tax_threshold=args.tax_threshold,
    )
    data = compile_dataset(ds, config.cap, config.tax_threshold)
    data.model.check_pattern_sizes()
    manifest = run_manifest(args, specs, file_hash(args.dataset), ds.n_components)
    started = _dt.datetime.now(_dt.timezone.utc)
    outputs = run(data, config)
    rows = summarize(outputs, alpha=args.alpha)
    out = _out_dir(args.out)
    report = {
        "schema": REPORT_SCHEMA,
        "version": SCHEMA_VERSION,
        "manifest": manifest,
        "alpha": args.alpha,
        "burn_in": args.burn_in,
        "iterations": args.iterations,
        "chains": args.chains,
        "households": len(ds),
        "rows": [
            {
                "summary": r.label, "lower": r.lower, "prediction": r.mean, "upper": r.upper,
                "raw_mean": r.raw_mean, "mc_se": r.mc_se, "ess": r.ess,
                "drift_flag": r.diagnostics.flagged, "seed_delta": r.diagnostics.seed_delta,
                "warnings": r.warnings,
            }
            for r in rows
        ],
    }
    write_json(report, out / "report.json")
    write_sweep_log(outputs, out / "sweeps.jsonl", manifest)
    write_running_means(outputs, out / "running_means.csv")
    write_json({**manifest, "started": started.isoformat(),
                "finished": _dt.datetime.now(_dt.timezone.utc).isoformat()}, out / "manifest.json")
    width = max(len(r.label) for r in rows)
    print(f"{'summary':<{width}}  {'lower':>14}  {'prediction':>14}  {'upper':>14}")
    for r in rows:
        print(f"{r.label:<{width}}  {r.lower:>14.6g}  {r.mean:>14.6g}  {r.upper:>14.6g}")
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else secrets.randbits(32)
    cfg = GeneratorConfig(
        N=args.N, sample_size=args.sample_size, component_count=args.components or 5,
        design=args.design, point_measures=args.point_measures, refine=args.refine,
    )
    ex = simulate(cfg, seed)
    out = _out_dir(args.out)
    h = write_dataset(ex.dataset, out / "dataset.jsonl")
    # aggregation leaves household totals unchanged, so the truth is shared
    truth = ex.truth
    write_json({
        "schema": TRUTH_SCHEMA, "version": SCHEMA_VERSION, "seed": seed, "dataset_hash": h,
        "N": cfg.N, "households": len(ex.dataset), "components": cfg.component_count,
        "summaries": truth,
    }, out / "truth.json")
    print(f"seed {seed}: population {cfg.N}, {len(ex.dataset)} responding households")
    print(f"true Gini {truth['Gini']:.6f}; wrote {out / 'dataset.jsonl'} and {out / 'truth.json'}")
    return EXIT_OK


def _validate_one(directory: Path):
    truth = read_json(directory / "truth.json")
    report = read_json(directory / "report.json")
    dataset = directory / "dataset.jsonl"
    h = report["manifest"]["dataset_hash"]
    if truth.get("dataset_hash") != h:
        raise HashMismatch(f"{directory}: truth file and report refer to different datasets")
    if dataset.exists() and file_hash(dataset) != h:
        raise HashMismatch(f"{directory}: dataset file does not match the report's hash")
    rows = []
    for r in report["rows"]:
        true = truth["summaries"].get(r["summary"])
        if true is None:
            continue
        covered = r["lower"] <= true <= r["upper"]
        err = abs(r["prediction"] - true)
        rows.append((r["summary"], true, r["prediction"], r["lower"], r["upper"], covered, err))
    return rows


def cmd_validate(args) -> int:
    dirs = [Path(d) for d in args.dirs]
    tol = dict(t.split("=") for t in args.tolerance) if args.tolerance else {}
    tol = {k: float(v) for k, v in tol.items()}
    per = [_validate_one(d) for d in dirs]
    failures = 0
    if len(dirs) == 1:
        print(f"{'summary':<14} {'truth':>14} {'prediction':>14} {'lower':>14} {'upper':>14}  result")
        for label, true, pred, lo, hi, covered, err in per[0]:
            ok = covered and err <= tol.get(label, np.inf)
            failures += not ok
            print(f"{label:<14} {true:>14.6g} {pred:>14.6g} {lo:>14.6g} {hi:>14.6g}  {'PASS' if ok else 'FAIL'}")
    else:
        print(f"{'summary':<14} {'covered':>8} {'needed':>8}  result")
        labels = [row[0] for row in per[0]]
        for j, label in enumerate(labels):
            hits = sum(rows[j][5] for rows in per)
            need = int(np.ceil(args.min_coverage * len(per)))
            ok = hits >= need
            failures += not ok
            print(f"{label:<14} {hits:>8} {need:>8}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if failures == 0 else EXIT_FAILED_CHECKS


# -- parser ------------------------------------------------------------------

def _common(p):
    p.add_argument("--cap", type=float, default=DEFAULT_CAP, help="upper cap on unbounded brackets")
    p.add_argument("--tax-threshold", type=float, default=TAX_THRESHOLD)
    p.add_argument("--components", type=int, choices=(4, 5), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wealthineq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and check every domain")
    p.add_argument("dataset")
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("estimate", help="run the sampler and write the report")
    p.add_argument("dataset")
    p.add_argument("--out", default=None, help=f"output directory (overridden by ${OUTPUT_ENV})")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--summaries", default=None, help="comma separated, e.g. Gini,theil,quantile:0.9")
    p.add_argument("--variance-mode", choices=VARIANCE_MODES, default="Linearization")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="generate a synthetic dataset and its truth file")
    p.add_argument("--out", default=None, help=f"output directory (overridden by ${OUTPUT_ENV})")
    p.add_argument("--seed", type=int, default=None, help="random when omitted (recorded in the truth file)")
    p.add_argument("--N", type=int, default=20_000)
    p.add_argument("--sample-size", type=int, default=2700, help="households drawn before nonresponse")
    p.add_argument("--design", default="StratifiedSRS",
                   choices=("SRSWOR", "StratifiedSRS", "UnequalProbFixedSize", "TwoStageCluster"))
    p.add_argument("--point-measures", action="store_true", help="observe every amount exactly")
    p.add_argument("--refine", type=int, default=0, help="halve every bracket this many times")
    p.add_argument("--components", type=int, choices=(4, 5), default=5)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="check reports against truth files")
    p.add_argument("dirs", nargs="+", help="directories holding dataset.jsonl, truth.json and report.json")
    p.add_argument("--tolerance", action="append", help="LABEL=MAX_ABS_ERROR, repeatable")
    p.add_argument("--min-coverage", type=float, default=0.7,
                   help="share of replicates whose region must cover the truth")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleDomainError as exc:
        print(f"error: infeasible domain: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except HashMismatch as exc:
        print(f"error: hash mismatch: {exc}", file=sys.stderr)
        return EXIT_HASH
    except (ChainError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (IngestError, DataError, PatternSizeError, IdentificationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
