"""Approximate balancing weights on the probability simplex.

Weights on one reference arm solve

    min  zeta * ||lam||_2^2 + (1 - zeta) * ||A lam - b||_inf^2   s.t. lam >= 0, sum(lam) = 1

where the columns of ``A`` are the reference units' standardized covariates
and ``b`` the standardized target means.

The solver is an outer proximal-point loop (only needed when ``zeta == 0``)
around an accelerated projected-gradient ascent on the smooth dual of each
subproblem. Every subproblem is started from, and compared against, the
current weights, so the primal objective is non-increasing over outer
iterates. The dual value certifies the gap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ATT,
    Dataset,
    EmptyReferenceArm,
    Estimand,
    FloatArray,
    PointEstimate,
    ValidationError,
    ZeroArmWeight,
)

_PROX_WEIGHT = 1.0


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    cond = u - css / k > 0
    r = k[cond][-1]
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


def _prox_sq_l1(y: np.ndarray, s: float) -> np.ndarray:
    """argmin_z s * ||z||_1^2 + 0.5 ||z - y||^2."""
    a = np.sort(np.abs(y))[::-1]
    if a.size == 0 or a[0] == 0.0:
        return np.zeros_like(y)
    # z_i = sign(y_i) max(|y_i| - theta, 0), theta = 2 s ||z||_1
    css = np.cumsum(a)
    k = np.arange(1, a.size + 1)
    theta = 2.0 * s * css / (1.0 + 2.0 * s * k)
    valid = a > theta
    r = np.flatnonzero(valid)[-1]
    return np.sign(y) * np.maximum(np.abs(y) - theta[r], 0.0)


def _subproblem(A, b, zeta, kappa, center, rho_p, lam0, rtol, atol, max_iter):
    """min zeta||l||^2 + rho_p||l - center||^2 + kappa||A l - b||_inf^2 over the simplex.

    Stops once the duality gap is below ``max(rtol * value, atol)``.

    Returns (best_lambda, best_value, iterations, gap).
    """
    rho = zeta + rho_p
    c = rho_p * center

    def primal(lam):
        r = A @ lam - b
        inf = float(np.max(np.abs(r))) if r.size else 0.0
        return (zeta * lam @ lam + rho_p * np.sum((lam - center) ** 2)
                + kappa * inf * inf)

    best = lam0.copy()
    best_val = primal(best)
    if kappa == 0.0 or A.shape[0] == 0:
        cand = project_simplex(c / rho)
        v = primal(cand)
        if v <= best_val:
            best, best_val = cand, v
        return best, best_val, 1, 0.0

    def lam_of(z):
        return project_simplex((c - A.T @ z) / rho)

    def dual(z, lam):
        # min over the simplex of the Lagrangian, attained at lam
        q = c - A.T @ z
        return (rho * lam @ lam - 2.0 * q @ lam + rho_p * center @ center
                - 2.0 * z @ b - np.abs(z).sum() ** 2 / kappa)

    lip = 2.0 * np.linalg.norm(A, 2) ** 2 / rho
    step = 1.0 / lip
    z = np.zeros(A.shape[0])
    yk = z.copy()
    tk = 1.0
    gap = np.inf
    best_dual = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        lam_y = lam_of(yk)
        grad = 2.0 * (A @ lam_y - b)
        z_new = _prox_sq_l1(yk + step * grad, step / kappa)
        lam_z = lam_of(z_new)
        pv = primal(lam_z)
        if pv < best_val:
            best, best_val = lam_z, pv
        dv = dual(z_new, lam_z)
        best_dual = max(best_dual, dv)
        gap = best_val - best_dual
        if gap <= max(rtol * best_val, atol):
            break
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        # restart momentum when the dual value drops
        if dv < best_dual - 1e-15:
            yk = z_new.copy()
            t_new = 1.0
        else:
            yk = z_new + ((tk - 1.0) / t_new) * (z_new - z)
        z, tk = z_new, t_new
    return best, best_val, it, max(gap, 0.0)


@dataclass(frozen=True, eq=False)
class BalanceSolution:
    lam: FloatArray
    imbalance: FloatArray
    objective: float
    converged: bool
    iterations: int
    reference: int
    objective_trace: FloatArray = field(default_factory=lambda: np.empty(0), repr=False)
    dropped_columns: tuple[int, ...] = ()
    gap: float = 0.0


def solve_balancing_weights(
    X,
    W,
    target: str = "treated",
    zeta: float = 0.5,
    max_iter: int = 50_000,
    tol: float = 1e-6,
    *,
    reference: int = 0,
) -> BalanceSolution:
    """Weights over the ``reference`` arm whose covariate means approach ``target``.

    ``target`` is ``"treated"`` (treated-arm means) or ``"pooled"`` (full
    sample means). Covariates are scaled by the reference arm's standard
    deviation; zero-variance columns are dropped from the imbalance term.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    W = np.asarray(W, dtype=np.float64).ravel()
    if not 0.0 <= zeta <= 1.0:
        raise ValidationError(f"zeta must lie in [0, 1], got {zeta}")
    ref = np.flatnonzero(W == reference)
    if ref.size == 0:
        raise EmptyReferenceArm(f"no units with W == {reference}")
    if target == "treated":
        tgt_rows = W == 1
    elif target == "pooled":
        tgt_rows = np.ones_like(W, dtype=bool)
    else:
        raise ValidationError(f"unknown balance target {target!r}")
    if not tgt_rows.any():
        raise ValidationError("balance target has no units")
    Xr = X[ref]
    mean_r = Xr.mean(axis=0)
    sd_r = Xr.std(axis=0)
    keep = sd_r > 1e-12 * (1.0 + np.abs(mean_r))
    dropped = tuple(int(j) for j in np.flatnonzero(~keep))
    if dropped:
        warnings.warn(
            f"dropping zero-variance covariates {list(dropped)} from the balance objective",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = np.where(keep, sd_r, 1.0)
    tgt = X[tgt_rows].mean(axis=0)
    A_full = (Xr / scale).T
    b_full = tgt / scale
    # canonical row order: the result must not depend on column order
    kept = np.flatnonzero(keep)
    order = sorted(kept, key=lambda j: (A_full[j].tobytes(), b_full[j].tobytes()))
    A = np.ascontiguousarray(A_full[order])
    b = b_full[order].copy()

    kappa = 1.0 - zeta
    rho_p = 0.0 if zeta > 0.0 else _PROX_WEIGHT
    m = ref.size
    lam = np.full(m, 1.0 / m)

    def objective(l):
        r = A @ l - b
        inf = float(np.max(np.abs(r))) if r.size else 0.0
        return zeta * l @ l + kappa * inf * inf

    trace = [objective(lam)]
    # tolerances are relative to the objective at uniform weights
    atol = tol * max(trace[0], 1e-300)
    used = 0
    converged = False
    gap = np.inf
    while used < max_iter:
        new, _, it, gap = _subproblem(
            A, b, zeta, kappa, lam, rho_p, lam, tol, atol * 1e-6, max_iter - used
        )
        used += it
        f_new = objective(new)
        if f_new > trace[-1]:
            new, f_new = lam, trace[-1]
        step = float(np.max(np.abs(new - lam)))
        decrease = trace[-1] - f_new
        lam = new
        trace.append(f_new)
        if rho_p == 0.0:
            converged = gap <= max(tol * f_new, atol * 1e-6)
            break
        # the objective is a squared imbalance: square the tolerance for exact balance
        if f_new <= tol * atol * 1e-6 or (decrease <= tol * atol and step <= tol / m):
            converged = True
            break
    if not converged:
        warnings.warn(
            f"balancing weights did not converge in {max_iter} iterations (gap={gap:.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    weights = np.zeros(W.shape[0])
    weights[ref] = lam
    imbalance = np.zeros(X.shape[1])
    imbalance[kept] = (lam @ Xr[:, kept] - tgt[kept]) / scale[kept]
    return BalanceSolution(
        lam=weights,
        imbalance=imbalance,
        objective=trace[-1],
        converged=converged,
        iterations=used,
        reference=reference,
        objective_trace=np.asarray(trace),
        dropped_columns=dropped,
        gap=float(gap),
    )


def balancing_estimate(ds: Dataset, lam, estimand: Estimand = ATT) -> PointEstimate:
    """Difference of ``lam``-weighted arm means."""
    lam = np.asarray(lam, dtype=np.float64)
    w1 = lam * ds.W
    w0 = lam * (1.0 - ds.W)
    s1, s0 = w1.sum(), w0.sum()
    if s1 <= 0 or s0 <= 0:
        raise ZeroArmWeight("each arm needs positive total weight")
    value = float(w1 @ ds.Y / s1 - w0 @ ds.Y / s0)
    return PointEstimate(value, 0.0, "balance", estimand, ds.n)


def weights_with_treated(sol: BalanceSolution, W) -> np.ndarray:
    """Full weight vector: solver weights on the reference arm, 1 elsewhere."""
    W = np.asarray(W, dtype=np.float64)
    other = W != sol.reference
    out = sol.lam.copy()
    out[other] = 1.0
    return out
