"""Shared domain types, errors and run configuration."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]


class AteError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(AteError):
    """Input data or configuration is malformed."""


class EstimationError(AteError):
    """An estimator could not produce a value for the given data."""


class NonBinaryTreatment(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    def __init__(self, row: int, column: int | str, message: str | None = None):
        self.row = row
        self.column = column
        super().__init__(message or f"non-finite value at row {row}, column {column}")


class MissingColumn(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        super().__init__(f"cannot parse {value!r} at row {row}, column {column!r}")


class SchemaMismatch(ValidationError):
    pass


class EmptyArm(EstimationError):
    pass


class RankDeficient(EstimationError):
    pass


class NoConvergence(EstimationError):
    def __init__(self, message: str, fit: Any = None):
        super().__init__(message)
        self.fit = fit


class SeparationDetected(EstimationError):
    pass


class TooFewRows(EstimationError):
    pass


class EmptyReferenceArm(EstimationError):
    pass


class ZeroArmWeight(EstimationError):
    pass


class FoldArmEmpty(EstimationError):
    pass


class EmptyAfterTrim(EstimationError):
    pass


class MissingVarianceEstimates(EstimationError):
    pass


class TooManyFailedReplicates(EstimationError):
    pass


class AllSplitsFailed(EstimationError):
    pass


class UnknownDgp(ValidationError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed sample: covariates ``X`` (n x d), binary treatment ``W`` and outcome ``Y``.

    Arrays are copied and frozen on construction. ``d == 0`` is tolerated only
    through :meth:`from_arrays` with ``allow_empty_x=True`` (used internally
    for covariate-free regressions).
    """

    X: FloatArray
    W: FloatArray
    Y: FloatArray
    column_names: tuple[str, ...]

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        W = np.asarray(self.W, dtype=np.float64).ravel()
        Y = np.asarray(self.Y, dtype=np.float64).ravel()
        n = X.shape[0]
        if n < 2:
            raise ValidationError(f"need at least 2 rows, got {n}")
        if W.shape[0] != n or Y.shape[0] != n:
            raise ValidationError(
                f"length mismatch: X has {n} rows, W {W.shape[0]}, Y {Y.shape[0]}"
            )
        if len(self.column_names) != X.shape[1]:
            raise ValidationError(
                f"{len(self.column_names)} column names for {X.shape[1]} covariates"
            )
        for name, arr in (("Y", Y), ("W", W)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise NonFiniteValue(int(bad[0]), name)
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            raise NonFiniteValue(int(bad[0, 0]), self.column_names[int(bad[0, 1])])
        off = np.flatnonzero((W != 0.0) & (W != 1.0))
        if off.size:
            raise NonBinaryTreatment(
                f"treatment value {W[off[0]]!r} at row {int(off[0])} is not 0 or 1"
            )
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "W", _readonly(W))
        object.__setattr__(self, "Y", _readonly(Y))
        object.__setattr__(self, "column_names", tuple(str(c) for c in self.column_names))

    @classmethod
    def from_arrays(
        cls,
        X: npt.ArrayLike,
        W: npt.ArrayLike,
        Y: npt.ArrayLike,
        column_names: Sequence[str] | None = None,
        *,
        allow_empty_x: bool = False,
    ) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if column_names is None:
            column_names = [f"x{j}" for j in range(X.shape[1])]
        if X.shape[1] == 0 and not allow_empty_x:
            raise ValidationError("need at least one covariate")
        return cls(X, W, Y, tuple(column_names))

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_treated(self) -> int:
        return int(self.W.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, idx: npt.ArrayLike) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.W[idx], self.Y[idx], self.column_names)

    def with_outcome(self, Y: npt.ArrayLike) -> "Dataset":
        return Dataset(self.X, self.W, Y, self.column_names)

    def require_both_arms(self) -> None:
        if self.n_treated == 0 or self.n_control == 0:
            raise EmptyArm(
                f"need both arms: {self.n_treated} treated, {self.n_control} control"
            )


def validate_dataset(
    rows: Sequence[Mapping[str, Any]],
    outcome: str = "y",
    treatment: str = "w",
) -> Dataset:
    """Build a :class:`Dataset` from a list of records.

    Every key other than ``outcome`` and ``treatment`` is a covariate; the
    covariate order is the key order of the first record.
    """
    if not rows:
        raise ValidationError("no rows")
    keys = list(rows[0].keys())
    for k in (outcome, treatment):
        if k not in keys:
            raise MissingColumn(f"column {k!r} not found")
    covs = [k for k in keys if k not in (outcome, treatment)]
    n, d = len(rows), len(covs)
    X = np.empty((n, d))
    W = np.empty(n)
    Y = np.empty(n)
    for i, rec in enumerate(rows):
        if list(rec.keys()) != keys:
            raise ValidationError(f"row {i} does not have the same columns as row 0")
        try:
            Y[i] = float(rec[outcome])
        except (TypeError, ValueError):
            raise ParseError(i, outcome, rec[outcome]) from None
        try:
            W[i] = float(rec[treatment])
        except (TypeError, ValueError):
            raise NonBinaryTreatment(
                f"treatment value {rec[treatment]!r} at row {i} is not 0 or 1"
            ) from None
        for j, k in enumerate(covs):
            v = rec[k]
            if v is None:
                raise NonFiniteValue(i, k, f"missing value at row {i}, column {k!r}")
            try:
                X[i, j] = float(v)
            except (TypeError, ValueError):
                raise ParseError(i, k, v) from None
    return Dataset.from_arrays(X, W, Y, covs)


class EstimandKind(str, enum.Enum):
    ATE = "ATE"
    ATT = "ATT"
    OVERLAP = "OverlapWeighted"
    TRIMMED = "Trimmed"


@dataclass(frozen=True)
class Estimand:
    kind: EstimandKind = EstimandKind.ATE
    alpha: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EstimandKind(self.kind))
        if self.kind is EstimandKind.TRIMMED:
            if self.alpha is None or not 0.0 < self.alpha < 0.5:
                raise ValidationError(f"trimming alpha must lie in (0, 0.5), got {self.alpha}")
        elif self.alpha is not None:
            raise ValidationError("alpha is only meaningful for the trimmed estimand")

    @classmethod
    def parse(cls, text: str | "Estimand") -> "Estimand":
        if isinstance(text, Estimand):
            return text
        key = text.strip().lower()
        table = {
            "ate": EstimandKind.ATE,
            "att": EstimandKind.ATT,
            "overlap": EstimandKind.OVERLAP,
            "overlapweighted": EstimandKind.OVERLAP,
        }
        if key in table:
            return cls(table[key])
        if key.startswith("trimmed"):
            _, _, a = key.partition(":")
            return cls(EstimandKind.TRIMMED, float(a) if a else 0.1)
        raise ValidationError(f"unknown estimand {text!r}")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out


ATE = Estimand(EstimandKind.ATE)
ATT = Estimand(EstimandKind.ATT)
OVERLAP = Estimand(EstimandKind.OVERLAP)


def weight_function(estimand: Estimand, ehat: npt.ArrayLike) -> FloatArray:
    """Unit weights defining a weighted average treatment effect."""
    e = np.asarray(ehat, dtype=np.float64)
    kind = estimand.kind
    if kind is EstimandKind.ATE:
        return np.ones_like(e)
    if kind is EstimandKind.ATT:
        return e.copy()
    if kind is EstimandKind.OVERLAP:
        return e * (1.0 - e)
    a = float(estimand.alpha)  # type: ignore[arg-type]
    return ((e > a) & (e < 1.0 - a)).astype(np.float64)


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    """Fitted propensities and outcome regressions aligned with a dataset."""

    ehat: FloatArray
    mu0hat: FloatArray
    mu1hat: FloatArray
    phat: float
    clip_eta: float = 0.01
    sigma2_0hat: FloatArray | None = None
    sigma2_1hat: FloatArray | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_eta < 0.5:
            raise ValidationError(f"clip_eta must lie in (0, 0.5), got {self.clip_eta}")
        e = np.asarray(self.ehat, dtype=np.float64)
        if np.any(e < self.clip_eta) or np.any(e > 1.0 - self.clip_eta):
            raise ValidationError("propensities outside the clipping band; use build()")
        n = e.shape[0]
        for name in ("mu0hat", "mu1hat", "sigma2_0hat", "sigma2_1hat"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (n,):
                raise ValidationError(f"{name} has shape {v.shape}, expected ({n},)")
            if name.startswith("sigma") and np.any(v < 0):
                raise ValidationError(f"{name} has negative entries")
            object.__setattr__(self, name, _readonly(v))
        object.__setattr__(self, "ehat", _readonly(e))

    @classmethod
    def build(
        cls,
        ehat: npt.ArrayLike,
        mu0hat: npt.ArrayLike,
        mu1hat: npt.ArrayLike,
        W: npt.ArrayLike,
        clip_eta: float = 0.01,
        sigma2_0hat: npt.ArrayLike | None = None,
        sigma2_1hat: npt.ArrayLike | None = None,
    ) -> "NuisanceEstimates":
        """Clip raw propensities and set ``phat`` to the treated fraction of ``W``."""
        W = np.asarray(W, dtype=np.float64)
        e = np.clip(np.asarray(ehat, dtype=np.float64), clip_eta, 1.0 - clip_eta)
        e = np.broadcast_to(e, W.shape).copy()
        mu0 = np.broadcast_to(np.asarray(mu0hat, dtype=np.float64), W.shape).copy()
        mu1 = np.broadcast_to(np.asarray(mu1hat, dtype=np.float64), W.shape).copy()
        return cls(
            ehat=e,
            mu0hat=mu0,
            mu1hat=mu1,
            phat=float(W.sum()) / W.shape[0],
            clip_eta=clip_eta,
            sigma2_0hat=None if sigma2_0hat is None else np.maximum(sigma2_0hat, 0.0),
            sigma2_1hat=None if sigma2_1hat is None else np.maximum(sigma2_1hat, 0.0),
        )

    @property
    def has_variances(self) -> bool:
        return self.sigma2_0hat is not None and self.sigma2_1hat is not None

    def with_variances(self, s0: npt.ArrayLike, s1: npt.ArrayLike) -> "NuisanceEstimates":
        return dataclasses.replace(
            self, sigma2_0hat=np.maximum(s0, 0.0), sigma2_1hat=np.maximum(s1, 0.0)
        )

    def subset(self, idx: npt.ArrayLike, W_sub: npt.ArrayLike) -> "NuisanceEstimates":
        idx = np.asarray(idx)
        return NuisanceEstimates(
            ehat=self.ehat[idx],
            mu0hat=self.mu0hat[idx],
            mu1hat=self.mu1hat[idx],
            phat=float(np.sum(W_sub)) / len(idx),
            clip_eta=self.clip_eta,
            sigma2_0hat=None if self.sigma2_0hat is None else self.sigma2_0hat[idx],
            sigma2_1hat=None if self.sigma2_1hat is None else self.sigma2_1hat[idx],
        )


METHODS = ("naive", "ols", "dse", "arbe", "dre", "dmle")


@dataclass(frozen=True)
class PointEstimate:
    value: float
    se: float
    method: str
    estimand: Estimand
    n_used: int
    details: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise EstimationError(f"{self.method}: non-finite estimate {self.value}")
        if not (self.se >= 0.0):
            raise EstimationError(f"{self.method}: invalid standard error {self.se}")

    def to_json(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "estimand": self.estimand.to_json(),
            "value": self.value,
            "se": self.se,
            "n_used": self.n_used,
        }


@dataclass(frozen=True)
class LinmodConfig:
    n_lambda: int = 100
    lambda_ratio: float = 1e-4
    cv_folds: int = 5
    outcome_mix: float = 0.5
    selection_rule: str = "1se"
    prediction_rule: str = "min"
    tol: float = 1e-7
    max_sweeps: int = 10_000
    ridge_fallback: bool = True


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 5


@dataclass(frozen=True)
class BalanceConfig:
    zeta: float = 0.5
    max_iter: int = 50_000
    tol: float = 1e-6


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    bootstrap_reps: int = 1000
    half_sample_reps: int = 200
    dml_folds: int = 5
    trim_alpha: float = 0.1
    clip_eta: float = 0.01
    nuisance_family: str = "linear"
    hajek: bool = False
    reselect_penalty: bool = False
    hist_bins: int = 30
    linmod: LinmodConfig = field(default_factory=LinmodConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        for name in ("bootstrap_reps", "half_sample_reps", "hist_bins"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.dml_folds < 2:
            raise ValidationError("dml_folds must be at least 2")
        if not 0.0 < self.trim_alpha < 0.5:
            raise ValidationError("trim_alpha must lie in (0, 0.5)")
        if not 0.0 < self.clip_eta < 0.5:
            raise ValidationError("clip_eta must lie in (0, 0.5)")
        if self.nuisance_family not in ("linear", "forest"):
            raise ValidationError(f"unknown nuisance family {self.nuisance_family!r}")
        if self.linmod.cv_folds < 2:
            raise ValidationError("linmod.cv_folds must be at least 2")
        if not 0.0 <= self.balance.zeta <= 1.0:
            raise ValidationError("balance.zeta must lie in [0, 1]")

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def child_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def as_float_list(values: Iterable[float]) -> list[float]:
    return [float(v) for v in values]
