"""CSV ingestion, the RHC preprocessing manifest, and synthetic designs with known truth."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import integrate, stats

from .core import (
    Dataset,
    FloatArray,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    ParseError,
    SchemaMismatch,
    UnknownDgp,
    ValidationError,
    child_rng,
)

_MISSING = {"", "na", "nan", "null", "none"}


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ValidationError(f"row {i} has {len(r)} fields, header has {len(header)}")
    if not rows:
        raise ValidationError(f"{path} has no data rows")
    return header, rows


def _try_float(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def _numeric_column(values: Sequence[str], name: str) -> FloatArray:
    out = np.empty(len(values))
    for i, v in enumerate(values):
        s = v.strip()
        if s.lower() in _MISSING:
            raise NonFiniteValue(i, name, f"missing value at row {i}, column {name!r}")
        f = _try_float(s)
        if f is None:
            raise ParseError(i, name, v)
        if not math.isfinite(f):
            raise NonFiniteValue(i, name)
        out[i] = f
    return out


def _one_hot(values: Sequence[str], name: str, levels: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    levels = list(levels)
    cols = np.zeros((len(values), max(len(levels) - 1, 0)))
    index = {lv: k for k, lv in enumerate(levels)}
    for i, v in enumerate(values):
        k = index.get(v.strip())
        if k is None:
            raise SchemaMismatch(f"unexpected level {v!r} in column {name!r} at row {i}")
        if k > 0:
            cols[i, k - 1] = 1.0
    return cols, [f"{name}={lv}" for lv in levels[1:]]


def _binary(values: Sequence[str], name: str) -> FloatArray:
    out = np.empty(len(values))
    for i, v in enumerate(values):
        f = _try_float(v.strip())
        if f is None or f not in (0.0, 1.0):
            raise NonBinaryTreatment(f"treatment value {v!r} at row {i} is not 0 or 1")
        out[i] = f
    return out


def load_csv(
    path,
    outcome_col: str,
    treatment_col: str,
    drop_cols: Sequence[str] = (),
) -> Dataset:
    """Read a CSV into a :class:`Dataset`.

    Columns whose every cell parses as a number pass through; any other
    column is one-hot encoded with levels sorted lexicographically and the
    first level dropped (names ``col=level``). Missing cells are rejected.
    """
    header, rows = _read_rows(path)
    for col in (outcome_col, treatment_col, *drop_cols):
        if col not in header:
            raise MissingColumn(f"column {col!r} not found in {path}")
    cols = {h: [r[j] for r in rows] for j, h in enumerate(header)}
    Y = _numeric_column(cols[outcome_col], outcome_col)
    W = _binary(cols[treatment_col], treatment_col)
    skip = {outcome_col, treatment_col, *drop_cols}
    blocks, names = [], []
    for h in header:
        if h in skip:
            continue
        vals = cols[h]
        stripped = [v.strip() for v in vals]
        if any(s.lower() in _MISSING for s in stripped):
            i = next(k for k, s in enumerate(stripped) if s.lower() in _MISSING)
            raise NonFiniteValue(i, h, f"missing value at row {i}, column {h!r}")
        if all(_try_float(s) is not None for s in stripped):
            blocks.append(_numeric_column(vals, h).reshape(-1, 1))
            names.append(h)
        else:
            block, nm = _one_hot(vals, h, sorted(set(stripped)))
            blocks.append(block)
            names.extend(nm)
    if not blocks:
        raise ValidationError("no covariate columns")
    X = np.hstack(blocks)
    return Dataset.from_arrays(X, W, Y, names)


# ----------------------------------------------------------------------------
# RHC manifest


def default_manifest_path() -> Path:
    return Path(str(resources.files("atekit") / "data" / "rhc_manifest_v1.json"))


def load_manifest(path=None) -> dict[str, Any]:
    p = Path(path) if path is not None else default_manifest_path()
    with p.open(encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ValidationError("manifest must be a JSON list")
    roles = [e.get("role", "covariate") for e in entries]
    if roles.count("outcome") != 1 or roles.count("treatment") != 1:
        raise ValidationError("manifest needs exactly one outcome and one treatment entry")
    return {"entries": entries}


def manifest_width(manifest: dict[str, Any]) -> int:
    d = 0
    for e in manifest["entries"]:
        if e.get("role", "covariate") != "covariate":
            continue
        d += 1 if e["kind"] == "numeric" else len(e["levels"]) - 1
    return d


def _indicator(values: Sequence[str], entry: dict[str, Any], name: str) -> FloatArray:
    if entry["kind"] == "numeric":
        v = _numeric_column(values, name)
        if not np.all((v == 0) | (v == 1)):
            raise SchemaMismatch(f"column {name!r} is not a 0/1 indicator")
        return v
    pos = entry["positive"]
    levels = set(entry["levels"])
    out = np.empty(len(values))
    for i, raw in enumerate(values):
        s = raw.strip()
        if s not in levels:
            raise SchemaMismatch(f"unexpected level {raw!r} in column {name!r} at row {i}")
        out[i] = 1.0 if s == pos else 0.0
    return out


def rhc_prepare(path, manifest_path=None) -> Dataset:
    """Build the right-heart-catheterization analysis dataset from the public CSV.

    The column recipe lives in a JSON manifest (a list of
    ``{source_column, kind, levels, role}`` entries); the shipped one is a
    best-effort reconstruction of the covariate set.
    """
    manifest = load_manifest(manifest_path)
    header, rows = _read_rows(path)
    cols = {h: [r[j] for r in rows] for j, h in enumerate(header)}
    missing = [e["source_column"] for e in manifest["entries"] if e["source_column"] not in cols]
    if missing:
        raise SchemaMismatch(f"manifest columns absent from data: {missing}")
    Y = W = None
    blocks, names = [], []
    for e in manifest["entries"]:
        name = e["source_column"]
        role = e.get("role", "covariate")
        vals = cols[name]
        if role == "outcome":
            Y = _indicator(vals, e, name)
        elif role == "treatment":
            W = _indicator(vals, e, name)
        elif e["kind"] == "numeric":
            blocks.append(_numeric_column(vals, name).reshape(-1, 1))
            names.append(name)
        elif e["kind"] == "categorical":
            block, nm = _one_hot(vals, name, e["levels"])
            blocks.append(block)
            names.extend(nm)
        else:
            raise ValidationError(f"unknown manifest kind {e['kind']!r}")
    return Dataset.from_arrays(np.hstack(blocks), W, Y, names)


def write_csv(ds: Dataset, path, outcome: str = "y", treatment: str = "w") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow([outcome, treatment, *ds.column_names])
        for i in range(ds.n):
            wr.writerow([repr(float(ds.Y[i])), int(ds.W[i]), *(repr(float(v)) for v in ds.X[i])])


# ----------------------------------------------------------------------------
# synthetic designs


@dataclass(frozen=True)
class SynthSpec:
    """Linear design with independent standard normal covariates.

    ``logistic``: e(x) = 1 / (1 + exp(-(offset + x'gamma))).
    ``clipped_linear``: e(x) = clip(0.5 + offset + link_scale * x'gamma, 0.02, 0.98).
    Outcomes: Y(w) = tau * w + x'beta + w * x'hetero + noise_sd * N(0, 1).
    """

    n: int
    d: int
    beta: tuple[float, ...]
    gamma: tuple[float, ...]
    tau: float = 1.0
    link: str = "logistic"
    noise_sd: float = 1.0
    hetero: tuple[float, ...] | None = None
    link_scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if self.hetero is not None:
            object.__setattr__(self, "hetero", tuple(float(h) for h in self.hetero))
            if len(self.hetero) != self.d:
                raise ValidationError("hetero must have length d")
        if len(self.beta) != self.d or len(self.gamma) != self.d:
            raise ValidationError("beta and gamma must have length d")
        if self.link not in ("logistic", "clipped_linear"):
            raise ValidationError(f"unknown link {self.link!r}")
        if self.noise_sd < 0 or self.n < 2 or self.d < 1:
            raise ValidationError("invalid synthetic spec")

    def propensity(self, X) -> FloatArray:
        u = np.asarray(X) @ np.asarray(self.gamma)
        return self.link_fn(u)

    def link_fn(self, u):
        if self.link == "logistic":
            return 1.0 / (1.0 + np.exp(-(self.offset + u)))
        return np.clip(0.5 + self.offset + self.link_scale * u, 0.02, 0.98)

    def _index_moments(self, fn) -> float:
        """E[fn(u)] for u = X'gamma ~ N(0, |gamma|^2)."""
        s = float(np.linalg.norm(self.gamma))
        if s == 0.0:
            return float(fn(np.array([0.0]))[0])
        val, _ = integrate.quad(
            lambda z: float(fn(np.array([s * z]))[0]) * stats.norm.pdf(z), -12, 12,
            limit=400, points=self._kinks(s),
        )
        return float(val)

    def _kinks(self, s):
        if self.link != "clipped_linear" or self.link_scale == 0:
            return None
        lo = (0.02 - 0.5 - self.offset) / (self.link_scale * s)
        hi = (0.98 - 0.5 - self.offset) / (self.link_scale * s)
        return [z for z in (lo, hi) if -12 < z < 12] or None

    def population(self) -> dict[str, float]:
        """Population treated share, ATE, ATT and naive bias by quadrature."""
        g = np.asarray(self.gamma)
        b = np.asarray(self.beta)
        h = np.zeros(self.d) if self.hetero is None else np.asarray(self.hetero)
        s2 = float(g @ g)
        p = self._index_moments(self.link_fn)
        if s2 > 0:
            eu = self._index_moments(lambda u: self.link_fn(u) * u)
            # E[x'c | u] = (gamma'c / |gamma|^2) u for Gaussian x
            cov_e_beta = eu * float(g @ b) / s2
            cov_e_h = eu * float(g @ h) / s2
        else:
            cov_e_beta = cov_e_h = 0.0
        att = self.tau + cov_e_h / p
        # naive bias = Cov(e, mu1)/p + Cov(e, mu0)/(1 - p)
        bias = (cov_e_beta + cov_e_h) / p + cov_e_beta / (1.0 - p)
        return {"p": p, "ate": self.tau, "att": att, "naive_bias": bias,
                "cov_e_xbeta": cov_e_beta}


@dataclass(frozen=True, eq=False)
class OracleSample:
    dataset: Dataset
    y0: FloatArray
    y1: FloatArray
    e_true: FloatArray
    mu0_true: FloatArray
    mu1_true: FloatArray
    tau_true: float
    tau_t_true: float
    spec: SynthSpec = field(repr=False)


def generate_synthetic(spec: SynthSpec, seed: int) -> OracleSample:
    rng = child_rng(seed, 0x53594E)
    X = rng.standard_normal((spec.n, spec.d))
    e = spec.propensity(X)
    W = (rng.random(spec.n) < e).astype(np.float64)
    lin = X @ np.asarray(spec.beta)
    cate = spec.tau + (X @ np.asarray(spec.hetero) if spec.hetero is not None else 0.0)
    mu0 = lin
    mu1 = lin + cate
    eps0 = spec.noise_sd * rng.standard_normal(spec.n)
    eps1 = spec.noise_sd * rng.standard_normal(spec.n)
    y0 = mu0 + eps0
    y1 = mu1 + eps1
    Y = np.where(W == 1, y1, y0)
    pop = spec.population()
    ds = Dataset.from_arrays(X, W, Y, [f"x{j + 1}" for j in range(spec.d)])
    return OracleSample(ds, y0, y1, e, mu0, np.asarray(mu1, dtype=float) * np.ones(spec.n),
                        float(pop["ate"]), float(pop["att"]), spec)


def _dgp_table(n: int) -> dict[str, SynthSpec]:
    return {
        "randomized": SynthSpec(n, 5, (1.0, 0.5, 0.5, 0.0, 0.0), (0.0,) * 5, 1.0,
                                link="clipped_linear", noise_sd=1.0),
        "confounded_linear": SynthSpec(n, 5, (1.0, 1.0, 0.5, 0.0, 0.0),
                                       (0.5, -0.5, 0.4, 0.0, 0.0), 1.0, link="logistic"),
        "poor_overlap": SynthSpec(n, 5, (1.0, 0.5, 0.5, 0.0, 0.0),
                                  (2.5, 1.5, 0.0, 0.0, 0.0), 1.0, link="logistic",
                                  hetero=(0.5, 0.0, 0.0, 0.0, 0.0)),
        "well_overlap": SynthSpec(n, 5, (1.0, 0.5, 0.5, 0.0, 0.0),
                                  (0.2, -0.1, 0.0, 0.0, 0.0), 1.0, link="logistic",
                                  hetero=(0.5, 0.0, 0.0, 0.0, 0.0)),
        "product_sparse": SynthSpec(n, 10, (0.5, 0.5, 0.5) + (0.0,) * 7,
                                    (0.0, 0.0, 0.5, 0.5, 0.5) + (0.0,) * 5, 1.0,
                                    link="clipped_linear", link_scale=0.2),
    }


DGP_NAMES = tuple(_dgp_table(2))


def named_dgp(name: str, n: int) -> SynthSpec:
    table = _dgp_table(n)
    if name not in table:
        raise UnknownDgp(f"unknown DGP {name!r}; choose from {list(table)}")
    return table[name]
