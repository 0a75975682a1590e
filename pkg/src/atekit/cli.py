"""Command-line front end.

Machine-readable JSON goes to stdout (or the ``--out`` file); diagnostics go
to stderr. Exit codes: 0 success, 2 invalid input, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ATT,
    METHODS,
    AteError,
    Dataset,
    Estimand,
    EstimationError,
    ForestConfig,
    LinmodConfig,
    RunConfig,
    ValidationError,
    child_seed,
)
from .dataio import DGP_NAMES, generate_synthetic, load_csv, named_dgp, rhc_prepare
from .diagnostics import bias_function_summary, bootstrap_se, build_report, overlap_bounds
from .estimators import estimate
from .plotting import histogram_svg

log = logging.getLogger("atekit")

EXIT_OK, EXIT_INVALID, EXIT_ESTIMATION = 0, 2, 3


def _methods(text: str) -> list[str]:
    out = [m.strip().lower() for m in text.split(",") if m.strip()]
    if out == ["all"]:
        return list(METHODS)
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {list(METHODS)}")
    return out


def _estimand(text: str) -> Estimand:
    try:
        return Estimand.parse(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_data_args(p: argparse.ArgumentParser, need_methods: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="CSV with outcome, treatment and covariates")
    src.add_argument("--rhc", type=Path, help="raw RHC CSV, encoded through the manifest")
    p.add_argument("--manifest", type=Path, help="column manifest for --rhc")
    p.add_argument("--outcome", default="y")
    p.add_argument("--treatment", default="w")
    p.add_argument("--drop", default="", help="comma-separated columns to ignore")
    if need_methods:
        p.add_argument("--methods", type=_methods, default=list(METHODS),
                       help="comma-separated subset of " + ",".join(METHODS) + " (or all)")
        p.add_argument("--estimand", type=_estimand, default=Estimand.parse("att"))
    _add_config_args(p)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nuisance", choices=("linear", "forest"), default="linear")
    p.add_argument("--dml-folds", type=int, default=5)
    p.add_argument("--clip-eta", type=float, default=0.01)
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--reselect-penalty", action="store_true",
                   help="re-run penalty selection inside every resample")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atekit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="point estimates as a JSON array")
    _add_data_args(p)
    p.add_argument("--bootstrap", type=int, default=0,
                   help="replace analytic s.e. with a bootstrap over this many resamples")

    p = sub.add_parser("report", help="estimates plus supplementary analyses")
    _add_data_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--hist", type=Path, help="histogram CSV; an SVG is written next to it")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--trim-alpha", type=float, default=0.1)
    p.add_argument("--half-sample-reps", type=int, default=200)
    p.add_argument("--bins", type=int, default=30)

    p = sub.add_parser("simulate", help="Monte Carlo study on a named DGP")
    p.add_argument("--dgp", required=True, help="one of " + ", ".join(DGP_NAMES))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--methods", type=_methods, default=["naive", "dre"])
    p.add_argument("--estimand", type=_estimand, default=Estimand.parse("ate"))
    p.add_argument("--bound-reps", type=int, default=10,
                   help="replications used for the overlap bound ratio (0 to skip)")
    _add_config_args(p)

    p = sub.add_parser("bias-hist", help="histogram of the bias function")
    _add_data_args(p, need_methods=False)
    p.add_argument("--out", type=Path, required=True, help="CSV path; SVG written alongside")
    p.add_argument("--bins", type=int, default=30)
    return parser


def _config(args, **extra) -> RunConfig:
    return RunConfig(
        seed=args.seed,
        dml_folds=args.dml_folds,
        clip_eta=args.clip_eta,
        nuisance_family=args.nuisance,
        reselect_penalty=args.reselect_penalty,
        linmod=LinmodConfig(cv_folds=args.cv_folds),
        forest=ForestConfig(n_trees=args.trees),
        **extra,
    )


def _load(args) -> Dataset:
    if args.rhc is not None:
        return rhc_prepare(args.rhc, args.manifest)
    drop = [c for c in args.drop.split(",") if c]
    return load_csv(args.data, args.outcome, args.treatment, drop)


def _emit(obj, out: Path | None = None) -> None:
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def cmd_estimate(args) -> int:
    cfg = _config(args)
    ds = _load(args)
    log.info("config %s", cfg.config_hash())
    out = []
    for m in args.methods:
        est = estimate(m, ds, cfg, args.seed, args.estimand)
        row = est.to_json()
        if args.bootstrap:
            row["se"] = bootstrap_se(m, ds, cfg, args.bootstrap, args.seed,
                                     estimand=args.estimand,
                                     penalties=est.details.get("penalties") or None)
            row["se_kind"] = "bootstrap"
        else:
            row["se_kind"] = "analytic"
        row["config_hash"] = cfg.config_hash()
        out.append(row)
    _emit(out)
    return EXIT_OK


def _write_hist(summary, csv_path: Path) -> Path:
    csv_path.write_text(summary.histogram_csv(), encoding="utf-8")
    return histogram_svg(summary.histogram, csv_path.with_suffix(".svg"))


def cmd_report(args) -> int:
    cfg = _config(args, bootstrap_reps=args.bootstrap, half_sample_reps=args.half_sample_reps,
                  trim_alpha=args.trim_alpha, hist_bins=args.bins)
    ds = _load(args)
    report = build_report(ds, args.methods, cfg, args.seed, estimand=args.estimand)
    args.out.write_text(report.dumps(), encoding="utf-8")
    for f in report.meta["failures"]:
        print(f"failed: {f['method']} {f['cell']}: {f['error']}", file=sys.stderr)
    if args.hist is not None and report.bias_summary is not None:
        svg = _write_hist(report.bias_summary, args.hist)
        log.info("histogram written to %s and %s", args.hist, svg)
    ok = any(r["estimate"] is not None for r in report.rows)
    return EXIT_OK if ok else EXIT_ESTIMATION


def cmd_bias_hist(args) -> int:
    cfg = _config(args, hist_bins=args.bins)
    ds = _load(args)
    summary = bias_function_summary(ds, cfg, args.seed, args.bins)
    svg = _write_hist(summary, args.out)
    _emit({"bias_summary": summary.to_json(), "csv": str(args.out), "svg": str(svg),
           "config": cfg.to_json()})
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.reps < 1 or args.n < 4:
        raise ValidationError("need reps >= 1 and n >= 4")
    spec = named_dgp(args.dgp, args.n)
    cfg = _config(args)
    pop = spec.population()
    truth = pop["att"] if args.estimand == ATT else pop["ate"]
    ests = {m: [] for m in args.methods}
    covered = {m: 0 for m in args.methods}
    failed = {m: 0 for m in args.methods}
    ratios = []
    for r in range(args.reps):
        sample = generate_synthetic(spec, child_seed(args.seed, r))
        rseed = child_seed(args.seed, r, 1)
        for m in args.methods:
            try:
                est = estimate(m, sample.dataset, cfg, rseed, args.estimand)
            except AteError as exc:
                failed[m] += 1
                log.warning("rep %d %s failed: %s", r, m, exc)
                continue
            ests[m].append(est.value)
            covered[m] += abs(est.value - truth) <= 1.959963984540054 * est.se
        if r < args.bound_reps:
            b = overlap_bounds(sample.dataset, cfg, rseed)
            if b["ratio"] is not None:
                ratios.append(b["ratio"])
    rows = []
    for m in args.methods:
        v = np.asarray(ests[m])
        k = v.size
        bias = float(v.mean() - truth) if k else math.nan
        sd = float(v.std(ddof=1)) if k > 1 else math.nan
        rows.append({
            "method": m,
            "bias": bias,
            "sd": sd,
            "rmse": float(np.sqrt(np.mean((v - truth) ** 2))) if k else math.nan,
            "mc_se_bias": sd / math.sqrt(k) if k > 1 else math.nan,
            "coverage": covered[m] / k if k else math.nan,
            "reps_ok": k,
            "reps_failed": failed[m],
        })
    out = {
        "dgp": args.dgp,
        "n": args.n,
        "reps": args.reps,
        "seed": args.seed,
        "estimand": args.estimand.to_json(),
        "truth": truth,
        "population": pop,
        "methods": rows,
        "bound_ratio": float(np.mean(ratios)) if ratios else None,
        "config": cfg.to_json(),
    }
    _emit(_finite(out))
    return EXIT_OK


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


COMMANDS = {
    "estimate": cmd_estimate,
    "report": cmd_report,
    "simulate": cmd_simulate,
    "bias-hist": cmd_bias_hist,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EstimationError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
