"""Regularized linear models fitted by coordinate descent.

Gaussian fits solve the elastic net on standardized covariates and a
standardized outcome (glmnet convention): with ``s_y`` the outcome standard
deviation the internal problem is

    (1/2n) ||y~ - X~ b~||^2 + (lambda / s_y) * (mix ||b~||_1 + (1 - mix)/2 ||b~||^2)

where ``b = s_y * b~``. For ``mix == 1`` this has the same minimizer as the
lasso objective ``(1/2n) RSS + lambda ||b||_1`` on the original outcome
scale, and for every ``mix`` fits are exactly equivariant to rescaling ``y``.

Binomial fits use a proximal Newton method: each outer step minimizes the
penalized quadratic model by coordinate descent, followed by a backtracking
line search on the true penalized likelihood, so the objective never rises.
Propensities are ``1 / (1 + exp(-(b0 + x'b)))``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numba import njit

from .core import (
    EstimationError,
    FloatArray,
    NoConvergence,
    RankDeficient,
    SeparationDetected,
    ValidationError,
    child_rng,
)

log = logging.getLogger(__name__)

_CONST_TOL = 1e-12
_SEPARATION_BOUND = 30.0


@njit(cache=True, nogil=True)
def _cd_quadratic(H, c, beta, pf, l1, l2, tol, max_sweeps, obj_hist):
    """Coordinate descent on 0.5 b'Hb - c'b + sum_j pf_j (l1 |b_j| + l2/2 b_j^2).

    ``beta`` is updated in place. Returns (sweeps, converged, kkt).
    """
    p = beta.shape[0]
    g = H @ beta
    sweeps = 0
    converged = False
    kkt = np.inf
    while sweeps < max_sweeps:
        max_delta = 0.0
        for j in range(p):
            hjj = H[j, j]
            denom = hjj + l2 * pf[j]
            if denom <= 0.0:
                continue
            bj = beta[j]
            z = c[j] - (g[j] - hjj * bj)
            thr = l1 * pf[j]
            if z > thr:
                new = (z - thr) / denom
            elif z < -thr:
                new = (z + thr) / denom
            else:
                new = 0.0
            delta = new - bj
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    g[k] += H[k, j] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        g = H @ beta
        obj = 0.5 * (beta @ g) - c @ beta
        for j in range(p):
            obj += pf[j] * (l1 * abs(beta[j]) + 0.5 * l2 * beta[j] * beta[j])
        if sweeps < obj_hist.shape[0]:
            obj_hist[sweeps] = obj
        sweeps += 1
        if max_delta < tol:
            kkt = 0.0
            for j in range(p):
                if H[j, j] + l2 * pf[j] <= 0.0:
                    continue
                r = g[j] - c[j]
                if pf[j] == 0.0:
                    v = abs(r)
                elif beta[j] > 0.0:
                    v = abs(r + pf[j] * (l1 + l2 * beta[j]))
                elif beta[j] < 0.0:
                    v = abs(r + pf[j] * (-l1 + l2 * beta[j]))
                else:
                    v = max(abs(r) - pf[j] * l1, 0.0)
                if v > kkt:
                    kkt = v
            if kkt < tol:
                converged = True
                break
    return sweeps, converged, kkt


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass(frozen=True, eq=False)
class LinearFit:
    intercept: float
    coefficients: FloatArray
    family: str
    lam: float
    mix: float
    x_mean: FloatArray
    x_scale: FloatArray
    converged: bool = True
    n_iter: int = 0
    objective_history: FloatArray = field(default_factory=lambda: np.empty(0), repr=False)
    kkt: float = 0.0
    ridge_fallback: bool = False

    def linear_predictor(self, X) -> FloatArray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return self.intercept + X @ self.coefficients

    def predict(self, X) -> FloatArray:
        eta = self.linear_predictor(X)
        if self.family == "binomial":
            return _sigmoid(eta)
        return eta

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients != 0.0)

    @property
    def standardized_coefficients(self) -> FloatArray:
        return self.coefficients * self.x_scale


def _sigmoid(eta):
    return np.exp(-np.logaddexp(0.0, -eta))


def _standardize(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    const = scale <= _CONST_TOL * (1.0 + np.abs(mean))
    safe = np.where(const, 1.0, scale)
    Z = (X - mean) / safe
    Z[:, const] = 0.0
    return Z, mean, safe, const


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def fit_ols(X, y, intercept: bool = True, ridge_fallback: bool = False) -> LinearFit:
    """Least squares via pivoted QR.

    A column whose pivot falls below ``1e-10`` of the leading pivot marks the
    design singular: either :class:`RankDeficient` is raised or, with
    ``ridge_fallback``, a ridge solve with penalty ``1e-6`` is returned and
    flagged.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if y.shape[0] != n:
        raise ValidationError("X and y have different numbers of rows")
    mean = X.mean(axis=0) if intercept else np.zeros(d)
    yc = y - y.mean() if intercept else y
    Xc = X - mean
    norms = np.sqrt((Xc**2).sum(axis=0))
    scale = np.where(norms > 0, norms, 1.0)
    Z = Xc / scale
    ridge = False
    if d == 0:
        b = np.zeros(0)
    else:
        Q, R, piv = scipy.linalg.qr(Z, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank_ok = diag.size == d and diag[0] > 0 and diag[-1] > 1e-10 * diag[0]
        if rank_ok:
            bp = scipy.linalg.solve_triangular(R, Q.T @ yc)
            b = np.empty(d)
            b[piv] = bp
        elif ridge_fallback:
            ridge = True
            b = np.linalg.solve(Z.T @ Z + 1e-6 * np.eye(d), Z.T @ yc)
        else:
            raise RankDeficient(f"design matrix is rank deficient ({d} columns)")
    coef = b / scale
    b0 = float(y.mean() - mean @ coef) if intercept else 0.0
    return LinearFit(
        intercept=b0,
        coefficients=coef,
        family="gaussian",
        lam=0.0,
        mix=1.0,
        x_mean=mean,
        x_scale=np.ones(d),
        ridge_fallback=ridge,
    )


class _GaussianProblem:
    """Standardized Gram representation reused along a penalty path."""

    def __init__(self, X, y):
        X = _as_2d(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        self.n = X.shape[0]
        Z, self.mean, self.scale, self.const = _standardize(X)
        self.keep = np.flatnonzero(~self.const)
        Zk = Z[:, self.keep]
        self.y_mean = float(y.mean())
        yc = y - self.y_mean
        sy = float(np.sqrt(np.mean(yc**2)))
        self.y_scale = sy if sy > _CONST_TOL * (1.0 + abs(self.y_mean)) else 0.0
        yt = yc / self.y_scale if self.y_scale > 0 else np.zeros_like(yc)
        self.H = np.ascontiguousarray(Zk.T @ Zk / self.n)
        self.c = Zk.T @ yt / self.n
        self.yy = float(yt @ yt / self.n)
        self.Z = Zk
        self.yt = yt

    def solve(self, lam, mix, beta0=None, tol=1e-7, max_sweeps=10_000):
        p = self.keep.size
        beta = np.zeros(p) if beta0 is None else beta0.copy()
        hist = np.empty(min(max_sweeps, 100_000))
        if self.y_scale == 0.0 or p == 0:
            return beta, 0, True, 0.0, np.array([0.0])
        lt = lam / self.y_scale
        sweeps, conv, kkt = _cd_quadratic(
            self.H, self.c, beta, np.ones(p), lt * mix, lt * (1.0 - mix),
            tol, max_sweeps, hist,
        )
        hist = hist[: min(sweeps, hist.size)] + 0.5 * self.yy
        return beta, sweeps, conv, kkt, hist

    def to_fit(self, beta, lam, mix, sweeps=0, conv=True, kkt=0.0, hist=None):
        d = self.mean.shape[0]
        coef = np.zeros(d)
        coef[self.keep] = self.y_scale * beta / self.scale[self.keep]
        return LinearFit(
            intercept=float(self.y_mean - self.mean @ coef),
            coefficients=coef,
            family="gaussian",
            lam=float(lam),
            mix=float(mix),
            x_mean=self.mean,
            x_scale=self.scale,
            converged=conv,
            n_iter=int(sweeps),
            objective_history=np.empty(0) if hist is None else hist,
            kkt=float(kkt),
        )

    def lambda_max(self, mix):
        if self.y_scale == 0.0 or self.keep.size == 0:
            return 1.0
        return float(np.max(np.abs(self.c)) * self.y_scale / max(mix, 1e-3))


def _check_penalty(lam, mix):
    if lam < 0:
        raise ValidationError(f"lambda must be non-negative, got {lam}")
    if not 0.0 <= mix <= 1.0:
        raise ValidationError(f"mix must lie in [0, 1], got {mix}")


def _warn_noconv(kind, fit):
    warnings.warn(
        f"{kind} did not converge after {fit.n_iter} iterations (kkt={fit.kkt:.2e})",
        RuntimeWarning,
        stacklevel=3,
    )


def fit_elastic_net(
    X,
    y,
    lam: float,
    mix: float = 1.0,
    *,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
    strict: bool = False,
) -> LinearFit:
    """Elastic net by coordinate descent; ``mix=1`` is the lasso.

    Constant columns get coefficient 0. If ``max_sweeps`` is exhausted the
    last iterate is returned with ``converged=False`` (or
    :class:`NoConvergence` raised when ``strict``).
    """
    _check_penalty(lam, mix)
    prob = _GaussianProblem(X, y)
    beta, sweeps, conv, kkt, hist = prob.solve(lam, mix, tol=tol, max_sweeps=max_sweeps)
    fit = prob.to_fit(beta, lam, mix, sweeps, conv, kkt, hist)
    if not conv:
        if strict:
            raise NoConvergence("elastic net did not converge", fit)
        _warn_noconv("elastic net", fit)
    return fit


def gaussian_kkt(fit: LinearFit, X, y) -> float:
    """Largest stationarity violation of ``fit`` on the standardized problem."""
    prob = _GaussianProblem(X, y)
    if prob.y_scale == 0.0 or prob.keep.size == 0:
        return 0.0
    beta = fit.coefficients[prob.keep] * prob.scale[prob.keep] / prob.y_scale
    lt = fit.lam / prob.y_scale
    r = prob.H @ beta - prob.c
    return _kkt_violation(r, beta, lt * fit.mix, lt * (1.0 - fit.mix))


def _kkt_violation(r, beta, l1, l2):
    nz = beta != 0.0
    v = np.where(
        nz,
        np.abs(r + l1 * np.sign(beta) + l2 * beta),
        np.maximum(np.abs(r) - l1, 0.0),
    )
    return float(v.max()) if v.size else 0.0


class _BinomialProblem:
    def __init__(self, X, w):
        X = _as_2d(X)
        w = np.asarray(w, dtype=np.float64).ravel()
        if not np.all((w == 0.0) | (w == 1.0)):
            raise ValidationError("binomial response must be 0/1")
        self.n = X.shape[0]
        n1 = w.sum()
        if n1 == 0 or n1 == self.n:
            raise EstimationError("binomial response needs both classes")
        Z, self.mean, self.scale, self.const = _standardize(X)
        self.keep = np.flatnonzero(~self.const)
        self.Z1 = np.column_stack([np.ones(self.n), Z[:, self.keep]])
        self.w = w

    def objective(self, theta, l1, l2):
        eta = self.Z1 @ theta
        nll = float(np.mean(np.logaddexp(0.0, eta) - self.w * eta))
        b = theta[1:]
        return nll + l1 * np.abs(b).sum() + 0.5 * l2 * b @ b

    def solve(self, lam, mix, theta0=None, tol=1e-7, max_sweeps=10_000, max_newton=100):
        p1 = self.Z1.shape[1]
        if theta0 is None:
            pbar = self.w.mean()
            theta = np.zeros(p1)
            theta[0] = np.log(pbar / (1.0 - pbar))
        else:
            theta = theta0.copy()
        l1, l2 = lam * mix, lam * (1.0 - mix)
        pf = np.ones(p1)
        pf[0] = 0.0
        f = self.objective(theta, l1, l2)
        hist = [f]
        conv = False
        kkt = np.inf
        it = 0
        scratch = np.empty(1)
        for it in range(1, max_newton + 1):
            eta = self.Z1 @ theta
            prob = _sigmoid(eta)
            v = np.maximum(prob * (1.0 - prob), 1e-5)
            grad = self.Z1.T @ (prob - self.w) / self.n
            H = np.ascontiguousarray((self.Z1 * v[:, None]).T @ self.Z1 / self.n)
            c = H @ theta - grad
            cand = theta.copy()
            _cd_quadratic(H, c, cand, pf, l1, l2, tol * 0.1, max_sweeps, scratch)
            direction = cand - theta
            b, bc = theta[1:], cand[1:]
            pen_old = l1 * np.abs(b).sum() + 0.5 * l2 * b @ b
            pen_new = l1 * np.abs(bc).sum() + 0.5 * l2 * bc @ bc
            decrease = grad @ direction + pen_new - pen_old
            step = 1.0
            accepted = False
            for _ in range(60):
                trial = theta + step * direction
                ft = self.objective(trial, l1, l2)
                if ft <= f + 1e-4 * step * min(decrease, 0.0):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                trial, ft = theta, f
            moved = float(np.max(np.abs(trial - theta))) if p1 else 0.0
            theta, f = trial, min(ft, f)
            hist.append(f)
            if lam == 0.0 and p1 > 1 and np.max(np.abs(theta[1:])) > _SEPARATION_BOUND:
                raise SeparationDetected(
                    "logistic coefficients diverge: the classes are (quasi-)separated"
                )
            prob = _sigmoid(self.Z1 @ theta)
            r = self.Z1.T @ (prob - self.w) / self.n
            kkt = max(abs(float(r[0])), _kkt_violation(r[1:], theta[1:], l1, l2))
            if kkt < max(tol, 1e-9) or (moved < tol and kkt < 1e-6) or not accepted:
                conv = kkt < 1e-6
                break
        return theta, it, conv, kkt, np.asarray(hist)

    def to_fit(self, theta, lam, mix, it=0, conv=True, kkt=0.0, hist=None):
        d = self.mean.shape[0]
        coef = np.zeros(d)
        coef[self.keep] = theta[1:] / self.scale[self.keep]
        return LinearFit(
            intercept=float(theta[0] - self.mean @ coef),
            coefficients=coef,
            family="binomial",
            lam=float(lam),
            mix=float(mix),
            x_mean=self.mean,
            x_scale=self.scale,
            converged=conv,
            n_iter=int(it),
            objective_history=np.empty(0) if hist is None else hist,
            kkt=float(kkt),
        )

    def lambda_max(self, mix):
        r = self.Z1[:, 1:].T @ (self.w - self.w.mean()) / self.n
        if r.size == 0:
            return 1.0
        return float(np.max(np.abs(r)) / max(mix, 1e-3))


def fit_logistic(
    X,
    w,
    lam: float,
    mix: float = 1.0,
    *,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
    max_newton: int = 100,
    strict: bool = False,
) -> LinearFit:
    """Penalized logistic regression, intercept unpenalized.

    Objective on standardized covariates:
    ``mean(log(1 + exp(eta)) - w * eta) + lam * (mix ||b||_1 + (1-mix)/2 ||b||^2)``.
    Raises :class:`SeparationDetected` when an unpenalized fit diverges.
    """
    _check_penalty(lam, mix)
    prob = _BinomialProblem(X, w)
    theta, it, conv, kkt, hist = prob.solve(
        lam, mix, tol=tol, max_sweeps=max_sweeps, max_newton=max_newton
    )
    fit = prob.to_fit(theta, lam, mix, it, conv, kkt, hist)
    if not conv:
        if strict:
            raise NoConvergence("logistic fit did not converge", fit)
        _warn_noconv("logistic fit", fit)
    return fit


def logistic_kkt(fit: LinearFit, X, w) -> float:
    prob = _BinomialProblem(X, w)
    theta = np.concatenate(
        [[fit.intercept + prob.mean @ fit.coefficients],
         fit.coefficients[prob.keep] * prob.scale[prob.keep]]
    )
    p = _sigmoid(prob.Z1 @ theta)
    r = prob.Z1.T @ (p - prob.w) / prob.n
    l1, l2 = fit.lam * fit.mix, fit.lam * (1.0 - fit.mix)
    return max(abs(float(r[0])), _kkt_violation(r[1:], theta[1:], l1, l2))


def fit_path(X, y, family: str, lambdas, mix: float = 1.0, tol: float = 1e-7,
             max_sweeps: int = 10_000) -> list[LinearFit | Exception]:
    """Fits along a descending penalty grid with warm starts.

    A grid point whose fit raises is returned as the exception instance.
    """
    out: list[LinearFit | Exception] = []
    if family == "gaussian":
        prob = _GaussianProblem(X, y)
        beta = None
        for lam in lambdas:
            b, sw, conv, kkt, hist = prob.solve(lam, mix, beta, tol, max_sweeps)
            beta = b
            out.append(prob.to_fit(b, lam, mix, sw, conv, kkt, hist))
    elif family == "binomial":
        bprob = _BinomialProblem(X, y)
        theta = None
        for lam in lambdas:
            try:
                t, it, conv, kkt, hist = bprob.solve(lam, mix, theta, tol, max_sweeps)
            except EstimationError as exc:
                out.append(exc)
                continue
            theta = t
            out.append(bprob.to_fit(t, lam, mix, it, conv, kkt, hist))
    else:
        raise ValidationError(f"unknown family {family!r}")
    return out


def lambda_max(X, y, family: str, mix: float = 1.0) -> float:
    """Smallest penalty at which every slope is zero."""
    if family == "gaussian":
        return _GaussianProblem(X, y).lambda_max(mix)
    return _BinomialProblem(X, y).lambda_max(mix)


def lambda_grid(lmax: float, n_lambda: int = 100, ratio: float = 1e-4) -> FloatArray:
    return np.exp(np.linspace(np.log(lmax), np.log(lmax * ratio), n_lambda))


def cv_folds(n: int, folds: int, rng: np.random.Generator, strata=None) -> list[np.ndarray]:
    """Seeded partition of ``range(n)`` into ``folds`` validation sets.

    With ``strata`` each stratum is spread round-robin across folds.
    """
    if not 2 <= folds <= n:
        raise ValidationError(f"folds must lie in [2, {n}], got {folds}")
    assign = np.empty(n, dtype=np.int64)
    if strata is None:
        perm = rng.permutation(n)
        assign[perm] = np.arange(n) % folds
    else:
        strata = np.asarray(strata)
        offset = 0
        for s in np.unique(strata):
            idx = np.flatnonzero(strata == s)
            perm = rng.permutation(idx)
            assign[perm] = (np.arange(perm.size) + offset) % folds
            offset += perm.size
    return [np.flatnonzero(assign == k) for k in range(folds)]


@dataclass(frozen=True, eq=False)
class CvResult:
    lambda_grid: FloatArray
    cv_error: FloatArray
    cv_se: FloatArray
    lambda_min: float
    lambda_1se: float
    family: str
    mix: float

    def select(self, rule: str) -> float:
        if rule == "min":
            return self.lambda_min
        if rule == "1se":
            return self.lambda_1se
        raise ValidationError(f"unknown selection rule {rule!r}")


def _validation_loss(fit: LinearFit, X, y, family):
    if family == "gaussian":
        return (y - fit.predict(X)) ** 2
    eta = fit.linear_predictor(X)
    return np.logaddexp(0.0, eta) - y * eta


def cv_select(
    X,
    y,
    family: str = "gaussian",
    folds: int = 5,
    mix: float = 1.0,
    *,
    seed: int = 0,
    n_lambda: int = 100,
    lambda_ratio: float = 1e-4,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
) -> CvResult:
    """K-fold cross-validation over a log-spaced penalty grid."""
    X = _as_2d(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = X.shape[0]
    lmax = lambda_max(X, y, family, mix)
    grid = lambda_grid(lmax, n_lambda, lambda_ratio)
    rng = child_rng(seed, 0x6376)
    parts = cv_folds(n, folds, rng, strata=y if family == "binomial" else None)
    losses = np.full((len(parts), grid.size), np.nan)
    counts = np.zeros(len(parts))
    for k, val in enumerate(parts):
        train = np.setdiff1d(np.arange(n), val, assume_unique=True)
        counts[k] = val.size
        try:
            fits = fit_path(X[train], y[train], family, grid, mix, tol, max_sweeps)
        except EstimationError as exc:
            log.debug("cv fold %d failed: %s", k, exc)
            continue
        for g, fit in enumerate(fits):
            if isinstance(fit, Exception):
                continue
            losses[k, g] = float(np.mean(_validation_loss(fit, X[val], y[val], family)))
    ok = ~np.isnan(losses)
    with np.errstate(invalid="ignore"):
        wsum = (ok * counts[:, None]).sum(axis=0)
        err = np.where(wsum > 0, np.nansum(losses * counts[:, None], axis=0) / np.maximum(wsum, 1), np.nan)
        nfold = ok.sum(axis=0)
        sd = np.array([
            np.std(losses[ok[:, g], g], ddof=1) if nfold[g] > 1 else np.nan
            for g in range(grid.size)
        ])
        se = sd / np.sqrt(np.maximum(nfold, 1))
    valid = np.flatnonzero(~np.isnan(err))
    if valid.size == 0:
        raise EstimationError("cross-validation failed at every grid point")
    imin = valid[np.argmin(err[valid])]
    bound = err[imin] + (se[imin] if np.isfinite(se[imin]) else 0.0)
    i1se = valid[np.flatnonzero(err[valid] <= bound)[0]]
    return CvResult(
        lambda_grid=grid,
        cv_error=err,
        cv_se=se,
        lambda_min=float(grid[imin]),
        lambda_1se=float(grid[i1se]),
        family=family,
        mix=mix,
    )
