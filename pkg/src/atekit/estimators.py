"""Treatment-effect estimators, efficient scores and variance bounds.

The score-based estimators (DRE, DMLE) use the standard augmented-IPW form

    phi_i = W_i (Y_i - mu1_i) / e_i - (1 - W_i) (Y_i - mu0_i) / (1 - e_i) + mu1_i - mu0_i - tau

for the average effect and

    phi'_i = (W_i / p) (Y_i - mu0_i - tau_t) - (1 - W_i) e_i / (p (1 - e_i)) (Y_i - mu0_i)

for the effect on the treated. Both are solved in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import linmod
from .balance import solve_balancing_weights
from .core import (
    ATE,
    ATT,
    Dataset,
    EmptyAfterTrim,
    EmptyArm,
    Estimand,
    EstimandKind,
    EstimationError,
    FloatArray,
    FoldArmEmpty,
    MissingVarianceEstimates,
    NuisanceEstimates,
    PointEstimate,
    RunConfig,
    ValidationError,
    child_rng,
    child_seed,
    weight_function,
)
from .forest import fit_forest, predict_oob

log = logging.getLogger(__name__)

Penalties = dict[str, float]


@dataclass(frozen=True, eq=False)
class ScoreVector:
    phi: FloatArray
    estimand: Estimand
    tau_used: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.phi))


@dataclass(frozen=True, eq=False)
class VarianceBound:
    """Efficiency bound with its per-unit contributions.

    ``value == mean(per_unit_terms)``. For weighted estimands the terms are
    normalized by the mean squared weight; ``alt_value`` is the same sum
    normalized by the squared mean weight.
    """

    estimand: Estimand
    value: float
    per_unit_terms: FloatArray = field(repr=False)
    alt_value: float | None = None


# ----------------------------------------------------------------------------
# scores


def efficient_score_ate(ds: Dataset, nuis: NuisanceEstimates, tau: float) -> ScoreVector:
    Y, W, e = ds.Y, ds.W, nuis.ehat
    phi = (
        W * (Y - nuis.mu1hat) / e
        - (1.0 - W) * (Y - nuis.mu0hat) / (1.0 - e)
        + nuis.mu1hat
        - nuis.mu0hat
        - tau
    )
    return ScoreVector(phi, ATE, float(tau))


def efficient_score_att(ds: Dataset, nuis: NuisanceEstimates, tau_t: float) -> ScoreVector:
    if ds.n_treated == 0:
        raise EmptyArm("the treated-effect score needs treated units")
    Y, W, e, p = ds.Y, ds.W, nuis.ehat, nuis.phat
    r0 = Y - nuis.mu0hat
    phi = (W / p) * (r0 - tau_t) - ((1.0 - W) * e / (p * (1.0 - e))) * r0
    return ScoreVector(phi, ATT, float(tau_t))


def aipw_pseudo_outcomes(ds: Dataset, nuis: NuisanceEstimates) -> FloatArray:
    """Per-unit AIPW terms; their mean is the closed-form ATE score solution."""
    return efficient_score_ate(ds, nuis, 0.0).phi


def score_estimate(
    ds: Dataset,
    nuis: NuisanceEstimates,
    estimand: Estimand = ATE,
    *,
    att_route: str = "score",
) -> tuple[float, ScoreVector | None]:
    """Closed-form solution of the mean-zero score equation.

    ATT uses the treated-effect score by default; ``att_route="weight"``
    instead weights the AIPW terms by the propensity.
    """
    kind = estimand.kind
    if kind is EstimandKind.ATT and att_route == "score":
        if ds.n_treated == 0:
            raise EmptyArm("no treated units")
        W, e = ds.W, nuis.ehat
        r0 = ds.Y - nuis.mu0hat
        tau = float(
            (np.sum(W * r0) - np.sum((1.0 - W) * e / (1.0 - e) * r0)) / ds.n_treated
        )
        return tau, efficient_score_att(ds, nuis, tau)
    gamma = aipw_pseudo_outcomes(ds, nuis)
    if kind is EstimandKind.ATE:
        tau = float(np.mean(gamma))
        return tau, efficient_score_ate(ds, nuis, tau)
    om = weight_function(estimand, nuis.ehat)
    if om.sum() <= 0:
        raise EmptyAfterTrim("all estimand weights are zero")
    return float(om @ gamma / om.sum()), None


def _score_se(score: ScoreVector | None) -> float:
    if score is None:
        return 0.0
    n = score.phi.shape[0]
    return float(np.sqrt(np.mean(score.phi**2) / n))


# ----------------------------------------------------------------------------
# simple estimators


def estimate_naive(ds: Dataset, estimand: Estimand = ATT) -> PointEstimate:
    """Difference in mean outcomes between arms."""
    ds.require_both_arms()
    t = ds.W == 1
    y1, y0 = ds.Y[t], ds.Y[~t]
    value = float(y1.mean() - y0.mean())
    v1 = y1.var(ddof=1) / y1.size if y1.size > 1 else 0.0
    v0 = y0.var(ddof=1) / y0.size if y0.size > 1 else 0.0
    return PointEstimate(value, float(np.sqrt(v1 + v0)), "naive", estimand, ds.n)


def _ols_effect(Y, W, Xsel, ridge_fallback: bool = True) -> tuple[float, float, bool]:
    """Coefficient on ``W`` from OLS of Y on (1, W, Xsel) with an HC1 s.e."""
    n = Y.shape[0]
    D = np.column_stack([W, Xsel]) if Xsel.size else W.reshape(-1, 1)
    fit = linmod.fit_ols(D, Y, intercept=True, ridge_fallback=ridge_fallback)
    resid = Y - fit.predict(D)
    Z = np.column_stack([np.ones(n), D])
    k = Z.shape[1]
    G = Z.T @ Z
    if fit.ridge_fallback:
        G = G + 1e-6 * np.eye(k)
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        Ginv = np.linalg.pinv(G)
    meat = (Z * resid[:, None] ** 2).T @ Z
    V = Ginv @ meat @ Ginv * (n / max(n - k, 1))
    se = float(np.sqrt(max(V[1, 1], 0.0)))
    return float(fit.coefficients[0]), se, fit.ridge_fallback


def estimate_ols(ds: Dataset, estimand: Estimand = ATT, *, ridge_fallback: bool = False) -> PointEstimate:
    """Coefficient on treatment in a regression on treatment and all covariates."""
    ds.require_both_arms()
    tau, se, ridge = _ols_effect(ds.Y, ds.W, ds.X, ridge_fallback)
    return PointEstimate(tau, se, "ols", estimand, ds.n, {"ridge_fallback": ridge})


# ----------------------------------------------------------------------------
# penalty selection and nuisance models


def _cv_folds_for(n: int, cfg: RunConfig) -> int:
    return int(min(cfg.linmod.cv_folds, n))


def _select_penalty(
    key: str,
    X,
    y,
    family: str,
    mix: float,
    rule: str,
    cfg: RunConfig,
    seed: int,
    fixed: Penalties | None,
    used: Penalties,
) -> float:
    if fixed is not None and key in fixed and not cfg.reselect_penalty:
        lam = float(fixed[key])
    else:
        lm = cfg.linmod
        folds = _cv_folds_for(len(y), cfg)
        if folds < 2:
            raise EstimationError(f"too few units to tune the {key} model")
        cv = linmod.cv_select(
            X, y, family, folds, mix,
            seed=child_seed(seed, hash_key(key)),
            n_lambda=lm.n_lambda,
            lambda_ratio=lm.lambda_ratio,
            tol=lm.tol,
            max_sweeps=lm.max_sweeps,
        )
        lam = cv.select(rule)
    used[key] = lam
    return lam


def hash_key(key: str) -> int:
    return int.from_bytes(key.encode()[:8].ljust(8, b"\0"), "little")


def _fit_gaussian(X, y, lam, mix, cfg):
    return linmod.fit_elastic_net(
        X, y, lam, mix, tol=cfg.linmod.tol, max_sweeps=cfg.linmod.max_sweeps
    )


def _fit_binomial(X, w, lam, mix, cfg):
    return linmod.fit_logistic(
        X, w, lam, mix, tol=cfg.linmod.tol, max_sweeps=cfg.linmod.max_sweeps
    )


@dataclass
class NuisanceModels:
    """Fitted propensity and arm-specific outcome predictors."""

    e: Callable[[np.ndarray], FloatArray]
    mu0: Callable[[np.ndarray], FloatArray]
    mu1: Callable[[np.ndarray], FloatArray]
    penalties: Penalties
    in_sample: tuple[FloatArray, FloatArray, FloatArray] | None = None


def fit_nuisance_models(
    X,
    W,
    Y,
    cfg: RunConfig,
    seed: int,
    penalties: Penalties | None = None,
    *,
    need: tuple[str, ...] = ("e", "mu0", "mu1"),
) -> NuisanceModels:
    """Fit ê by L1 logistic and mu_w by elastic net within arm w (or forests)."""
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    t = W == 1
    if not t.any() or t.all():
        raise EmptyArm("nuisance fitting needs both arms")
    used: Penalties = {}
    zero = lambda Xn: np.zeros(np.asarray(Xn).shape[0])  # noqa: E731
    if cfg.nuisance_family == "forest":
        fc = cfg.forest
        ins = [np.zeros(X.shape[0]) for _ in range(3)]

        def forest_on(rows, target, tag, slot):
            f = fit_forest(X[rows], target[rows], fc.n_trees, fc.mtry, fc.min_leaf,
                           child_seed(seed, tag))
            pred = f.predict(X)
            oob, _ = predict_oob(f, X[rows])
            pred[rows] = oob
            ins[slot] = pred
            return f.predict

        all_rows = np.ones(X.shape[0], dtype=bool)
        e_fn = forest_on(all_rows, W, 11, 0) if "e" in need else zero
        mu0_fn = forest_on(~t, Y, 12, 1) if "mu0" in need else zero
        mu1_fn = forest_on(t, Y, 13, 2) if "mu1" in need else zero
        return NuisanceModels(e_fn, mu0_fn, mu1_fn, used, tuple(ins))

    lm = cfg.linmod
    if "e" in need:
        lam_e = _select_penalty("e", X, W, "binomial", 1.0, lm.prediction_rule, cfg, seed,
                                penalties, used)
        fit_e = _fit_binomial(X, W, lam_e, 1.0, cfg)
        e_fn = fit_e.predict
    else:
        e_fn = zero
    fns = {}
    for key, rows in (("mu0", ~t), ("mu1", t)):
        if key not in need:
            fns[key] = zero
            continue
        if rows.sum() < 2:
            raise EmptyArm(f"too few units to fit {key}")
        lam = _select_penalty(key, X[rows], Y[rows], "gaussian", lm.outcome_mix,
                              lm.prediction_rule, cfg, seed, penalties, used)
        fns[key] = _fit_gaussian(X[rows], Y[rows], lam, lm.outcome_mix, cfg).predict
    return NuisanceModels(e_fn, fns["mu0"], fns["mu1"], used)


def fit_nuisances(
    ds: Dataset,
    cfg: RunConfig,
    seed: int,
    penalties: Penalties | None = None,
) -> tuple[NuisanceEstimates, Penalties]:
    """Full-sample nuisance estimates for ``ds`` (forest family: out-of-bag)."""
    m = fit_nuisance_models(ds.X, ds.W, ds.Y, cfg, seed, penalties)
    if m.in_sample is not None:
        e, mu0, mu1 = m.in_sample
    else:
        e, mu0, mu1 = m.e(ds.X), m.mu0(ds.X), m.mu1(ds.X)
    return NuisanceEstimates.build(e, mu0, mu1, ds.W, cfg.clip_eta), m.penalties


def estimate_variances(
    ds: Dataset,
    nuis: NuisanceEstimates,
    cfg: RunConfig,
    seed: int,
    penalties: Penalties | None = None,
) -> NuisanceEstimates:
    """Attach conditional variance estimates from within-arm regressions of squared residuals."""
    out = []
    used: Penalties = {}
    for w, mu in ((0, nuis.mu0hat), (1, nuis.mu1hat)):
        rows = ds.W == w
        r2 = (ds.Y - mu) ** 2
        if cfg.nuisance_family == "forest":
            fc = cfg.forest
            f = fit_forest(ds.X[rows], r2[rows], fc.n_trees, fc.mtry, fc.min_leaf,
                           child_seed(seed, 21 + w))
            pred = f.predict(ds.X)
            pred[rows] = predict_oob(f, ds.X[rows])[0]
        else:
            key = f"sigma2_{w}"
            lam = _select_penalty(key, ds.X[rows], r2[rows], "gaussian",
                                  cfg.linmod.outcome_mix, cfg.linmod.prediction_rule,
                                  cfg, seed, penalties, used)
            pred = _fit_gaussian(ds.X[rows], r2[rows], lam, cfg.linmod.outcome_mix, cfg).predict(ds.X)
        out.append(np.maximum(pred, 0.0))
    return nuis.with_variances(out[0], out[1])


# ----------------------------------------------------------------------------
# estimators with nuisance fitting


def estimate_dse(
    ds: Dataset,
    cfg: RunConfig,
    seed: int = 0,
    estimand: Estimand = ATT,
    penalties: Penalties | None = None,
) -> PointEstimate:
    """Double selection: lasso-select covariates for outcome and treatment, then OLS on the union."""
    ds.require_both_arms()
    used: Penalties = {}
    rule = cfg.linmod.selection_rule
    lam_y = _select_penalty("dse_y", ds.X, ds.Y, "gaussian", 1.0, rule, cfg, seed, penalties, used)
    lam_w = _select_penalty("dse_w", ds.X, ds.W, "binomial", 1.0, rule, cfg, seed, penalties, used)
    sel_y = _fit_gaussian(ds.X, ds.Y, lam_y, 1.0, cfg).active
    sel_w = _fit_binomial(ds.X, ds.W, lam_w, 1.0, cfg).active
    union = np.union1d(sel_y, sel_w)
    tau, se, ridge = _ols_effect(ds.Y, ds.W, ds.X[:, union], ridge_fallback=True)
    names = ds.column_names
    details = {
        "penalties": used,
        "selected_outcome": [names[j] for j in sel_y],
        "selected_treatment": [names[j] for j in sel_w],
        "selected_union": [names[j] for j in union],
        "ridge_fallback": ridge,
    }
    return PointEstimate(tau, se, "dse", estimand, ds.n, details)


def _arbe_arm(ds, arm, target, beta_fit, cfg):
    sol = solve_balancing_weights(
        ds.X, ds.W, target, cfg.balance.zeta, cfg.balance.max_iter, cfg.balance.tol,
        reference=arm,
    )
    rows = ds.W == arm
    resid = ds.Y - beta_fit.predict(ds.X)
    tgt_rows = ds.W == 1 if target == "treated" else np.ones(ds.n, dtype=bool)
    xbar = ds.X[tgt_rows].mean(axis=0)
    lam = sol.lam
    mean_hat = float(beta_fit.predict(xbar.reshape(1, -1))[0] + lam[rows] @ resid[rows])
    var = float(np.sum(lam[rows] ** 2 * resid[rows] ** 2))
    return mean_hat, var, sol


def estimate_arbe(
    ds: Dataset,
    cfg: RunConfig,
    seed: int = 0,
    estimand: Estimand = ATT,
    penalties: Penalties | None = None,
) -> PointEstimate:
    """Approximate residual balancing.

    For the effect on the treated: elastic-net outcome model on controls,
    balancing weights on controls toward treated means, and

        tau = mean(Y_t) - [xbar_t' b + sum_c lam_i (Y_i - x_i' b)].

    For the average effect the same construction is applied to each arm with
    the pooled means as target.
    """
    ds.require_both_arms()
    used: Penalties = {}
    lm = cfg.linmod
    mix = lm.outcome_mix
    fits = {}
    arms = (0,) if estimand.kind is EstimandKind.ATT else (0, 1)
    for arm in arms:
        rows = ds.W == arm
        if rows.sum() < 2:
            raise EmptyArm(f"arm {arm} too small for the outcome model")
        key = "arbe_mu0" if arm == 0 else "arbe_mu1"
        lam = _select_penalty(key, ds.X[rows], ds.Y[rows], "gaussian", mix,
                              lm.prediction_rule, cfg, seed, penalties, used)
        fits[arm] = _fit_gaussian(ds.X[rows], ds.Y[rows], lam, mix, cfg)
    details: dict[str, Any] = {"penalties": used}
    if estimand.kind is EstimandKind.ATT:
        t = ds.W == 1
        m0, v0, sol = _arbe_arm(ds, 0, "treated", fits[0], cfg)
        y1 = ds.Y[t]
        value = float(y1.mean() - m0)
        resid_t = y1 - fits[0].predict(ds.X[t])
        v1 = resid_t.var(ddof=1) / y1.size if y1.size > 1 else 0.0
        se = float(np.sqrt(v1 + v0))
        details["max_abs_imbalance"] = float(np.max(np.abs(sol.imbalance), initial=0.0))
        details["balance_converged"] = sol.converged
    elif estimand.kind is EstimandKind.ATE:
        m0, v0, s0 = _arbe_arm(ds, 0, "pooled", fits[0], cfg)
        m1, v1, s1 = _arbe_arm(ds, 1, "pooled", fits[1], cfg)
        value = m1 - m0
        se = float(np.sqrt(v0 + v1))
        details["balance_converged"] = s0.converged and s1.converged
    else:
        raise ValidationError("ARBE supports the ATE and ATT estimands")
    return PointEstimate(value, se, "arbe", estimand, ds.n, details)


def estimate_dre(
    ds: Dataset,
    cfg: RunConfig,
    seed: int = 0,
    estimand: Estimand = ATE,
    penalties: Penalties | None = None,
) -> PointEstimate:
    """Score-equation estimator with nuisances fitted on the full sample."""
    ds.require_both_arms()
    nuis, used = fit_nuisances(ds, cfg, seed, penalties)
    tau, score = score_estimate(ds, nuis, estimand)
    return PointEstimate(tau, _score_se(score), "dre", estimand, ds.n, {"penalties": used})


def dre_from_nuisances(ds: Dataset, nuis: NuisanceEstimates, estimand: Estimand = ATE) -> PointEstimate:
    """Score-equation estimate with externally supplied nuisances."""
    tau, score = score_estimate(ds, nuis, estimand)
    return PointEstimate(tau, _score_se(score), "dre", estimand, ds.n)


def dmle_folds(W, K: int, seed: int, max_tries: int = 100) -> list[np.ndarray]:
    """Seeded stratified partition in which every fold holds both arms."""
    W = np.asarray(W)
    for attempt in range(max_tries):
        parts = linmod.cv_folds(W.shape[0], K, child_rng(seed, 0x646D, attempt), strata=W)
        if all(((W[p] == 1).any() and (W[p] == 0).any()) for p in parts):
            return parts
    raise FoldArmEmpty(f"could not form {K} folds that each contain both arms")


def estimate_dmle(
    ds: Dataset,
    cfg: RunConfig,
    seed: int = 0,
    estimand: Estimand = ATE,
    penalties: Penalties | None = None,
    *,
    nuisance_fitter: Callable[..., NuisanceModels] | None = None,
) -> PointEstimate:
    """Cross-fitted score estimator: nuisances off-fold, score on-fold, fold estimates averaged."""
    ds.require_both_arms()
    K = cfg.dml_folds
    parts = dmle_folds(ds.W, K, child_seed(seed, 0x4B))
    fitter = nuisance_fitter or fit_nuisance_models
    taus = []
    phis = np.empty(ds.n)
    used_all: dict[str, list[float]] = {}
    for k, val in enumerate(parts):
        train = np.setdiff1d(np.arange(ds.n), val, assume_unique=True)
        m = fitter(ds.X[train], ds.W[train], ds.Y[train], cfg, child_seed(seed, 0x4B, k + 1),
                   penalties)
        sub = ds.subset(val)
        nuis = NuisanceEstimates.build(m.e(sub.X), m.mu0(sub.X), m.mu1(sub.X), sub.W,
                                       cfg.clip_eta)
        tau_k, score = score_estimate(sub, nuis, estimand)
        taus.append(tau_k)
        if score is not None:
            phis[val] = score.phi
        for key, lam in m.penalties.items():
            used_all.setdefault(key, []).append(lam)
    value = float(np.mean(taus))
    se = float(np.sqrt(np.mean(phis**2) / ds.n)) if estimand.kind in (EstimandKind.ATE, EstimandKind.ATT) else 0.0
    details = {
        "fold_estimates": taus,
        "fold_sizes": [int(p.size) for p in parts],
        "penalties": {k: float(np.median(v)) for k, v in used_all.items()},
    }
    return PointEstimate(value, se, "dmle", estimand, ds.n, details)


def ipw_estimate(
    ds: Dataset, nuis: NuisanceEstimates, *, hajek: bool = False, estimand: Estimand = ATE
) -> PointEstimate:
    """Inverse-propensity-weighted difference (Horvitz-Thompson or Hajek)."""
    Y, W, e = ds.Y, ds.W, nuis.ehat
    a = W / e
    b = (1.0 - W) / (1.0 - e)
    if hajek:
        if a.sum() <= 0 or b.sum() <= 0:
            raise EmptyArm("an arm has zero total weight")
        value = float(a @ Y / a.sum() - b @ Y / b.sum())
        terms = a * (Y - a @ Y / a.sum()) * ds.n / a.sum() - b * (Y - b @ Y / b.sum()) * ds.n / b.sum()
    else:
        terms = a * Y - b * Y
        value = float(np.mean(terms))
        terms = terms - value
    se = float(np.sqrt(np.mean(terms**2) / ds.n))
    return PointEstimate(value, se, "ipw", estimand, ds.n, {"hajek": hajek})


def variance_bound(
    ds: Dataset, nuis: NuisanceEstimates, estimand: Estimand, tau_hat: float
) -> VarianceBound:
    """Plug-in efficiency bound.

    ATE and ATT: mean squared efficient score. Weighted estimands:
    ``mean(w^2 [s1/e + s0/(1-e) + (mu1 - mu0 - tau)^2]) / mean(w^2)``.
    """
    kind = estimand.kind
    if kind is EstimandKind.ATE:
        terms = efficient_score_ate(ds, nuis, tau_hat).phi ** 2
        return VarianceBound(estimand, float(np.mean(terms)), terms)
    if kind is EstimandKind.ATT:
        terms = efficient_score_att(ds, nuis, tau_hat).phi ** 2
        return VarianceBound(estimand, float(np.mean(terms)), terms)
    if not nuis.has_variances:
        raise MissingVarianceEstimates("the weighted bound needs conditional variance estimates")
    return weighted_variance_bound(ds, nuis, weight_function(estimand, nuis.ehat), tau_hat, estimand)


def weighted_variance_bound(
    ds: Dataset,
    nuis: NuisanceEstimates,
    omega: FloatArray,
    tau_hat: float,
    estimand: Estimand = ATE,
) -> VarianceBound:
    if not nuis.has_variances:
        raise MissingVarianceEstimates("the weighted bound needs conditional variance estimates")
    e = nuis.ehat
    raw = omega**2 * (
        nuis.sigma2_1hat / e
        + nuis.sigma2_0hat / (1.0 - e)
        + (nuis.mu1hat - nuis.mu0hat - tau_hat) ** 2
    )
    m2 = float(np.mean(omega**2))
    m1 = float(np.mean(omega))
    if m2 <= 0:
        raise EmptyAfterTrim("all estimand weights are zero")
    terms = raw / m2
    return VarianceBound(estimand, float(np.mean(terms)), terms, float(np.mean(raw) / m1**2))


def weighted_tau(nuis: NuisanceEstimates, omega: FloatArray) -> float:
    """Plug-in weighted effect: sum w (mu1 - mu0) / sum w."""
    return float(omega @ (nuis.mu1hat - nuis.mu0hat) / omega.sum())


# ----------------------------------------------------------------------------
# dispatch


def _naive(ds, cfg, seed, estimand, penalties):
    return estimate_naive(ds, estimand)


def _ols(ds, cfg, seed, estimand, penalties):
    return estimate_ols(ds, estimand, ridge_fallback=cfg.linmod.ridge_fallback)


ESTIMATORS: dict[str, Callable[..., PointEstimate]] = {
    "naive": _naive,
    "ols": _ols,
    "dse": estimate_dse,
    "arbe": estimate_arbe,
    "dre": estimate_dre,
    "dmle": estimate_dmle,
}


def estimate(
    method: str,
    ds: Dataset,
    cfg: RunConfig | None = None,
    seed: int | None = None,
    estimand: Estimand = ATT,
    penalties: Penalties | None = None,
) -> PointEstimate:
    cfg = cfg or RunConfig()
    seed = cfg.seed if seed is None else seed
    try:
        fn = ESTIMATORS[method]
    except KeyError:
        raise ValidationError(f"unknown method {method!r}; choose from {sorted(ESTIMATORS)}") from None
    return fn(ds, cfg, seed, estimand, penalties)


def propensity_for_trimming(
    ds: Dataset, cfg: RunConfig, seed: int, penalties: Penalties | None = None
) -> FloatArray:
    m = fit_nuisance_models(ds.X, ds.W, ds.Y, cfg, seed, penalties, need=("e",))
    e = m.in_sample[0] if m.in_sample is not None else m.e(ds.X)
    return np.clip(e, cfg.clip_eta, 1.0 - cfg.clip_eta)


def trimmed_estimate(
    ds: Dataset,
    alpha: float,
    inner_method: str,
    cfg: RunConfig | None = None,
    seed: int | None = None,
    estimand: Estimand = ATT,
    *,
    ehat=None,
    penalties: Penalties | None = None,
) -> PointEstimate:
    """Re-run ``inner_method`` on units whose propensity lies in (alpha, 1 - alpha)."""
    cfg = cfg or RunConfig()
    seed = cfg.seed if seed is None else seed
    if not 0.0 < alpha < 0.5:
        raise ValidationError("alpha must lie in (0, 0.5)")
    e = propensity_for_trimming(ds, cfg, seed, penalties) if ehat is None else np.asarray(ehat)
    keep = np.flatnonzero((e > alpha) & (e < 1.0 - alpha))
    if keep.size < 2:
        raise EmptyAfterTrim(f"only {keep.size} units survive trimming at alpha={alpha}")
    sub = ds.subset(keep)
    if sub.n_treated == 0 or sub.n_control == 0:
        raise EmptyAfterTrim("trimming removed an entire arm")
    est = estimate(inner_method, sub, cfg, seed, estimand, penalties)
    details = dict(est.details, trimmed_alpha=alpha, n_dropped=ds.n - sub.n)
    return PointEstimate(est.value, est.se, est.method, est.estimand, sub.n, details)
