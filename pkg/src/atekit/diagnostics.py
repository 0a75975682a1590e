"""Supplementary analyses around a point estimate, and the summary report.

Every resampling task draws from a stream keyed by ``(seed, tag, index)``
and writes to its own slot, so results do not depend on execution order.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence, Union

import numpy as np

from . import __version__
from .core import (
    ATE,
    ATT,
    OVERLAP,
    AllSplitsFailed,
    AteError,
    Dataset,
    Estimand,
    EstimationError,
    FloatArray,
    NuisanceEstimates,
    PointEstimate,
    RunConfig,
    TooManyFailedReplicates,
    ValidationError,
    child_rng,
    child_seed,
    weight_function,
)
from ._parallel import parallel_map
from .estimators import (
    estimate,
    estimate_variances,
    fit_nuisances,
    propensity_for_trimming,
    score_estimate,
    trimmed_estimate,
    variance_bound,
    weighted_tau,
    weighted_variance_bound,
)
from .forest import fit_forest, predict_oob

log = logging.getLogger(__name__)

EstimatorFn = Callable[[Dataset, int], float]
EstimatorLike = Union[str, EstimatorFn]

_MAX_FAIL_SHARE = 0.10
_SPLIT_MIN_SHARE = 0.05


def make_estimator(
    method: EstimatorLike,
    cfg: RunConfig,
    estimand: Estimand = ATT,
    penalties: dict[str, float] | None = None,
) -> EstimatorFn:
    """Wrap a method tag as ``f(ds, seed) -> float``; callables pass through."""
    if callable(method):
        return method
    def run(ds: Dataset, seed: int) -> float:
        return estimate(method, ds, cfg, seed, estimand, penalties).value

    return run


def _run_tasks(fn: Callable[[int], float], count: int) -> tuple[np.ndarray, int]:
    def safe(i: int) -> float:
        try:
            return float(fn(i))
        except (AteError, np.linalg.LinAlgError) as exc:
            log.debug("replicate %d failed: %s", i, exc)
            return math.nan

    values = np.asarray(parallel_map(safe, range(count)), dtype=np.float64)
    failed = int(np.sum(~np.isfinite(values)))
    return values, failed


def bootstrap_se(
    estimator: EstimatorLike,
    ds: Dataset,
    cfg: RunConfig | None = None,
    B: int | None = None,
    seed: int | None = None,
    *,
    estimand: Estimand = ATT,
    penalties: dict[str, float] | None = None,
    return_replicates: bool = False,
):
    """Standard deviation of the estimator over ``B`` nonparametric bootstrap resamples.

    Everything, nuisance models included, is refit on each resample. Failed
    replicates are dropped; more than 10% failures raises
    :class:`TooManyFailedReplicates`.
    """
    cfg = cfg or RunConfig()
    B = cfg.bootstrap_reps if B is None else B
    seed = cfg.seed if seed is None else seed
    if B < 2:
        raise ValidationError("bootstrap needs at least 2 replicates")
    fn = make_estimator(estimator, cfg, estimand, penalties)
    n = ds.n

    def rep(r: int) -> float:
        rng = child_rng(seed, 0x626F6F74, r)
        idx = rng.integers(0, n, size=n)
        return fn(ds.subset(idx), child_seed(seed, 0x626F6F74, r, 1))

    values, failed = _run_tasks(rep, B)
    if failed > _MAX_FAIL_SHARE * B:
        raise TooManyFailedReplicates(f"{failed} of {B} bootstrap replicates failed")
    ok = values[np.isfinite(values)]
    se = float(np.std(ok, ddof=1)) if ok.size > 1 else 0.0
    if return_replicates:
        return se, values, failed
    return se


def half_sample_bias(
    estimator: EstimatorLike,
    ds: Dataset,
    cfg: RunConfig | None = None,
    reps: int | None = None,
    seed: int | None = None,
    *,
    se: float | None = None,
    full_estimate: float | None = None,
    estimand: Estimand = ATT,
    penalties: dict[str, float] | None = None,
) -> float:
    """Scaled half-sample bias.

    Each repetition splits the sample at random into halves of sizes
    ``floor(n/2)`` and ``ceil(n/2)`` and runs the estimator on both. The
    result is ``(mean of half estimates - full estimate) / se``, where ``se``
    defaults to the bootstrap standard error of the same estimator.
    """
    cfg = cfg or RunConfig()
    reps = cfg.half_sample_reps if reps is None else reps
    seed = cfg.seed if seed is None else seed
    n = ds.n
    if n < 4:
        raise ValidationError("half-sample bias needs at least 4 units")
    fn = make_estimator(estimator, cfg, estimand, penalties)
    if full_estimate is None:
        full_estimate = float(fn(ds, seed))
    if se is None:
        se = bootstrap_se(fn, ds, cfg, cfg.bootstrap_reps, seed, estimand=estimand)
    half = n // 2

    def task(i: int) -> float:
        r, side = divmod(i, 2)
        perm = child_rng(seed, 0x68616C66, r).permutation(n)
        idx = np.sort(perm[:half] if side == 0 else perm[half:])
        return fn(ds.subset(idx), child_seed(seed, 0x68616C66, r, side + 1))

    values, failed = _run_tasks(task, 2 * reps)
    if failed > _MAX_FAIL_SHARE * 2 * reps:
        raise TooManyFailedReplicates(f"{failed} of {2 * reps} half-sample fits failed")
    ok = values[np.isfinite(values)]
    diff = float(np.mean(ok) - full_estimate)
    if diff == 0.0:
        return 0.0
    if se == 0.0:
        return math.copysign(math.inf, diff)
    return diff / se


@dataclass(frozen=True)
class CovSplitResult:
    per_covariate: dict[str, float]
    mean: float
    std: float
    skipped: tuple[str, ...] = ()


def covariate_split_sensitivity(
    estimator: EstimatorLike,
    ds: Dataset,
    cfg: RunConfig | None = None,
    seed: int | None = None,
    *,
    estimand: Estimand = ATT,
    penalties: dict[str, float] | None = None,
) -> CovSplitResult:
    """Average of the two half estimates from splitting at each covariate's median.

    Units with value <= median form the low subsample. Covariates are skipped
    (and listed) when the split is constant, leaves 5% of units or fewer on
    one side, leaves a side without both arms, or the estimator fails.
    """
    cfg = cfg or RunConfig()
    seed = cfg.seed if seed is None else seed
    fn = make_estimator(estimator, cfg, estimand, penalties)
    n = ds.n
    names = ds.column_names

    def task(j: int) -> float:
        x = ds.X[:, j]
        med = float(np.median(x))
        low = x <= med
        k = int(low.sum())
        if min(k, n - k) <= _SPLIT_MIN_SHARE * n:
            return math.nan
        vals = []
        for side, mask in enumerate((low, ~low)):
            sub = ds.subset(np.flatnonzero(mask))
            if sub.n_treated == 0 or sub.n_control == 0:
                return math.nan
            vals.append(float(fn(sub, child_seed(seed, 0x636F76, j, side))))
        return 0.5 * (vals[0] + vals[1])

    values, _ = _run_tasks(task, ds.d)
    ok = np.isfinite(values)
    if not ok.any():
        raise AllSplitsFailed("no covariate produced a usable median split")
    per = {names[j]: float(values[j]) for j in range(ds.d) if ok[j]}
    skipped = tuple(names[j] for j in range(ds.d) if not ok[j])
    kept = values[ok]
    if np.all(kept == kept[0]):
        # identical values: report them exactly rather than with round-off
        return CovSplitResult(per, float(kept[0]), 0.0, skipped)
    std = float(np.std(kept, ddof=1)) if kept.size > 1 else 0.0
    return CovSplitResult(per, float(np.mean(kept)), std, skipped)


def type7_quantile(x, q) -> float:
    return float(np.quantile(np.asarray(x, dtype=np.float64), q, method="linear"))


@dataclass(frozen=True, eq=False)
class BiasFunctionSummary:
    """Bias-function values divided by the outcome standard deviation."""

    b_values: FloatArray = field(repr=False)
    mean: float
    q025: float
    q25: float
    median: float
    q75: float
    q975: float
    histogram: list[tuple[float, float, int]] = field(repr=False)
    y_std: float
    phat: float
    degenerate: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "q025": self.q025,
            "q25": self.q25,
            "median": self.median,
            "q75": self.q75,
            "q975": self.q975,
            "y_std": self.y_std,
            "degenerate_outcome": self.degenerate,
            "histogram": [
                {"bin_left": a, "bin_right": b, "count": c} for a, b, c in self.histogram
            ],
        }

    def histogram_csv(self) -> str:
        lines = ["bin_left,bin_right,count"]
        lines += [f"{a!r},{b!r},{c}" for a, b, c in self.histogram]
        return "\n".join(lines) + "\n"


def bias_values(ehat, mu0, mu1, phat) -> FloatArray:
    """(e - p) * (p (mu0 - mean mu0) + (1 - p) (mu1 - mean mu1))."""
    ehat, mu0, mu1 = (np.asarray(a, dtype=np.float64) for a in (ehat, mu0, mu1))
    return (ehat - phat) * (phat * (mu0 - mu0.mean()) + (1.0 - phat) * (mu1 - mu1.mean()))


def summarize_bias(b_scaled: FloatArray, bins: int, y_std: float, phat: float,
                   degenerate: bool = False) -> BiasFunctionSummary:
    b = np.asarray(b_scaled, dtype=np.float64)
    lo, hi = float(b.min()), float(b.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(b, bins=bins, range=(lo, hi))
    hist = [(float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(bins)]
    return BiasFunctionSummary(
        b_values=b,
        mean=float(np.mean(b)),
        q025=type7_quantile(b, 0.025),
        q25=type7_quantile(b, 0.25),
        median=type7_quantile(b, 0.5),
        q75=type7_quantile(b, 0.75),
        q975=type7_quantile(b, 0.975),
        histogram=hist,
        y_std=y_std,
        phat=phat,
        degenerate=degenerate,
    )


def bias_function_summary(
    ds: Dataset,
    cfg: RunConfig | None = None,
    seed: int | None = None,
    bins: int | None = None,
    *,
    ehat=None,
) -> BiasFunctionSummary:
    """Forest-based bias-function values, scaled by std(Y).

    ê is an out-of-bag regression forest of W on X; mu_w is fit within arm
    w, out-of-bag for that arm's units and all-tree predictions for the
    other arm. Passing ``ehat`` overrides the propensity forest.
    """
    cfg = cfg or RunConfig()
    seed = cfg.seed if seed is None else seed
    bins = cfg.hist_bins if bins is None else bins
    ds.require_both_arms()
    phat = ds.n_treated / ds.n
    y_std = float(np.std(ds.Y))
    if y_std == 0.0:
        return summarize_bias(np.zeros(ds.n), bins, 0.0, phat, degenerate=True)
    fc = cfg.forest
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if ehat is None:
            fe = fit_forest(ds.X, ds.W, fc.n_trees, fc.mtry, fc.min_leaf, child_seed(seed, 31))
            ehat = predict_oob(fe, ds.X)[0]
        mus = []
        for w in (0, 1):
            rows = ds.W == w
            f = fit_forest(ds.X[rows], ds.Y[rows], fc.n_trees, fc.mtry, fc.min_leaf,
                           child_seed(seed, 32 + w))
            pred = f.predict(ds.X)
            pred[rows] = predict_oob(f, ds.X[rows])[0]
            mus.append(pred)
    e = np.clip(np.asarray(ehat, dtype=np.float64), cfg.clip_eta, 1.0 - cfg.clip_eta)
    b = bias_values(e, mus[0], mus[1], phat)
    return summarize_bias(b / y_std, bins, y_std, phat)


@dataclass(frozen=True)
class AggregateBias:
    B: float
    naive_minus_reference: float | None = None


def aggregate_bias(
    summary: BiasFunctionSummary,
    phat: float | None = None,
    *,
    naive: float | None = None,
    reference: float | None = None,
) -> AggregateBias:
    """Naive-estimator bias implied by the bias function, in outcome units."""
    p = summary.phat if phat is None else phat
    if not 0.0 < p < 1.0:
        raise ValidationError("phat must lie in (0, 1)")
    mean_b = float(np.mean(summary.b_values)) * summary.y_std
    B = mean_b / (p * (1.0 - p))
    cmp = None if naive is None or reference is None else float(naive - reference)
    return AggregateBias(B, cmp)


# ----------------------------------------------------------------------------
# report


ROW_FIELDS = ("method", "estimate", "se", "trimmed", "sbb", "covsplit_mean", "covsplit_std")


@dataclass
class DiagnosticsReport:
    rows: list[dict[str, Any]]
    bias_summary: BiasFunctionSummary | None
    bounds: dict[str, Any]
    meta: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {
            "rows": [{k: _clean(r[k]) for k in ROW_FIELDS} for r in self.rows],
            "bias_summary": None if self.bias_summary is None else _clean(self.bias_summary.to_json()),
            "bounds": _clean(self.bounds),
            "meta": _clean(self.meta),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, allow_nan=False) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def overlap_bounds(ds: Dataset, cfg: RunConfig, seed: int, nuis: NuisanceEstimates | None = None) -> dict[str, Any]:
    """ATE efficiency bound against the overlap-weighted one, ``w = e(1 - e)``.

    Both bounds come from the same plug-in formula (conditional variances,
    propensities and effect heterogeneity), the ATE one with ``w = 1``. The
    mean squared efficient score is reported alongside as ``ate_bound_score``;
    under poor overlap it is heavy-tailed and unreliable in small samples.
    """
    if nuis is None:
        nuis, _ = fit_nuisances(ds, cfg, seed)
    tau_ate, _ = score_estimate(ds, nuis, ATE)
    score_bound = variance_bound(ds, nuis, ATE, tau_ate)
    if not nuis.has_variances:
        nuis = estimate_variances(ds, nuis, cfg, child_seed(seed, 41))
    ones = np.ones(ds.n)
    ate = weighted_variance_bound(ds, nuis, ones, weighted_tau(nuis, ones), ATE).value
    omega = weight_function(OVERLAP, nuis.ehat)
    tau_w = weighted_tau(nuis, omega)
    wb = weighted_variance_bound(ds, nuis, omega, tau_w, OVERLAP)
    return {
        "ate_bound": ate,
        "weighted_bound": wb.value,
        "ratio": wb.value / ate if ate > 0 else None,
        "weighted_bound_alt": wb.alt_value,
        "ratio_alt": wb.alt_value / ate if ate > 0 else None,
        "ate_bound_score": score_bound.value,
        "weight": "e(1-e)",
        "tau_ate": tau_ate,
        "tau_overlap": tau_w,
    }


def build_report(
    ds: Dataset,
    methods: Sequence[str],
    cfg: RunConfig | None = None,
    seed: int | None = None,
    *,
    estimand: Estimand = ATT,
    with_bias_summary: bool = True,
) -> DiagnosticsReport:
    """Run each method with its supplementary analyses.

    A failing cell is stored as null and listed under ``meta.failures``; the
    report itself only fails when ``methods`` is empty.
    """
    cfg = cfg or RunConfig()
    seed = cfg.seed if seed is None else seed
    if not methods:
        raise ValidationError("no methods requested")
    failures: list[dict[str, str]] = []
    skipped: set[str] = set()
    rows = []

    def cell(method: str, name: str, thunk: Callable[[], Any]):
        try:
            return thunk()
        except (AteError, np.linalg.LinAlgError) as exc:
            failures.append({"method": method, "cell": name, "error": f"{type(exc).__name__}: {exc}"})
            return None

    try:
        e_trim = propensity_for_trimming(ds, cfg, child_seed(seed, 51))
    except AteError as exc:
        e_trim = None
        failures.append({"method": "*", "cell": "trimmed", "error": f"{type(exc).__name__}: {exc}"})

    for mi, method in enumerate(methods):
        mseed = child_seed(seed, 0x6D, mi)
        row: dict[str, Any] = {k: None for k in ROW_FIELDS}
        row["method"] = method
        est = cell(method, "estimate", lambda: estimate(method, ds, cfg, mseed, estimand))
        if est is not None:
            row["estimate"] = est.value
            pen = est.details.get("penalties") or None
            se = cell(method, "se", lambda: bootstrap_se(
                method, ds, cfg, cfg.bootstrap_reps, mseed, estimand=estimand, penalties=pen))
            row["se"] = se
            if se is not None:
                row["sbb"] = cell(method, "sbb", lambda: half_sample_bias(
                    method, ds, cfg, cfg.half_sample_reps, mseed, se=se,
                    full_estimate=est.value, estimand=estimand, penalties=pen))
            cs = cell(method, "covsplit", lambda: covariate_split_sensitivity(
                method, ds, cfg, mseed, estimand=estimand, penalties=pen))
            if cs is not None:
                row["covsplit_mean"] = cs.mean
                row["covsplit_std"] = cs.std
                skipped.update(cs.skipped)
        if e_trim is not None:
            tr = cell(method, "trimmed", lambda: trimmed_estimate(
                ds, cfg.trim_alpha, method, cfg, mseed, estimand, ehat=e_trim))
            row["trimmed"] = None if tr is None else tr.value
        rows.append(row)

    bias = None
    if with_bias_summary:
        bias = cell("*", "bias_summary", lambda: bias_function_summary(
            ds, cfg, child_seed(seed, 61), cfg.hist_bins))
    bounds = cell("*", "bounds", lambda: overlap_bounds(ds, cfg, child_seed(seed, 71))) or {}
    bias_B = None if bias is None else aggregate_bias(bias).B
    meta = {
        "seed": seed,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_json(),
        "estimand": estimand.to_json(),
        "n": ds.n,
        "d": ds.d,
        "n_treated": ds.n_treated,
        "methods": list(methods),
        "skipped_covariates": sorted(skipped),
        "aggregate_bias": bias_B,
        "failures": failures,
        "version": __version__,
        "notes": [
            "naive, ols and dse estimate a constant effect; their value is reported in the ATT column",
            "weighted_bound uses the mean squared weight as normalizer; weighted_bound_alt uses the squared mean weight",
        ],
    }
    return DiagnosticsReport(rows, bias, bounds, meta)
