import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atekit.core import MissingColumn, NonBinaryTreatment, NonFiniteValue, ParseError, SchemaMismatch, UnknownDgp
from atekit.dataio import (
    DGP_NAMES,
    SynthSpec,
    default_manifest_path,
    generate_synthetic,
    load_csv,
    load_manifest,
    manifest_width,
    named_dgp,
    rhc_prepare,
    write_csv,
)
from atekit.estimators import estimate_naive


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_three_row_csv(tmp_path):
    ds = load_csv(_write(tmp_path, "y,w,x\n1,0,0\n2,1,1\n3,1,0\n"), "y", "w")
    assert (ds.n, ds.d) == (3, 1)
    np.testing.assert_array_equal(ds.W, [0, 1, 1])


def test_treatment_yes_rejected(tmp_path):
    with pytest.raises(NonBinaryTreatment):
        load_csv(_write(tmp_path, "y,w,x\n1,0,0\n2,yes,1\n"), "y", "w")


def test_categorical_encoding(tmp_path):
    ds = load_csv(_write(tmp_path, "y,w,c,x\n1,0,b,1\n2,1,a,2\n3,1,c,3\n4,0,a,4\n"), "y", "w")
    assert ds.column_names == ("c=b", "c=c", "x")
    np.testing.assert_array_equal(ds.X[:, :2], [[1, 0], [0, 0], [0, 1], [0, 0]])


def test_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv", "y", "w")
    with pytest.raises(MissingColumn):
        load_csv(_write(tmp_path, "y,w,x\n1,0,0\n2,1,1\n"), "out", "w")
    with pytest.raises(ParseError) as info:
        load_csv(_write(tmp_path, "y,w,x\n1,0,0\nabc,1,1\n"), "y", "w")
    assert info.value.row == 1
    with pytest.raises(NonFiniteValue):
        load_csv(_write(tmp_path, "y,w,x\n1,0,\n2,1,1\n"), "y", "w")


def test_drop_columns_and_determinism(tmp_path):
    p = _write(tmp_path, "id,y,w,x\n7,1,0,0.5\n8,2,1,1.5\n9,0,1,2\n")
    a = load_csv(p, "y", "w", drop_cols=["id"])
    b = load_csv(p, "y", "w", drop_cols=["id"])
    assert a.column_names == ("x",)
    assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()


def test_write_and_reload_roundtrip(tmp_path):
    s = generate_synthetic(named_dgp("randomized", 30), 1)
    write_csv(s.dataset, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv", "y", "w")
    np.testing.assert_array_equal(back.X, s.dataset.X)
    np.testing.assert_array_equal(back.Y, s.dataset.Y)


# ---------------------------------------------------------------- RHC manifest

def _fake_rhc(path, n=60, seed=0, rename=None):
    entries = load_manifest()["entries"]
    r = np.random.default_rng(seed)
    cols = {"": [str(i + 1) for i in range(n)]}
    for e in entries:
        name = e["source_column"]
        if e["kind"] == "numeric":
            cols[name] = [f"{v:.3f}" for v in r.normal(10, 3, n)]
            if name.endswith("hx"):
                cols[name] = [str(int(v)) for v in r.random(n) < 0.3]
        else:
            lv = e["levels"]
            cols[name] = [lv[k] for k in r.integers(0, len(lv), n)]
    if rename:
        cols[rename[1]] = cols.pop(rename[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(cols))
        for i in range(n):
            w.writerow([cols[c][i] for c in cols])
    return path


def test_manifest_shape():
    m = load_manifest()
    raw = json.loads(default_manifest_path().read_text(encoding="utf-8"))
    assert isinstance(raw, list)
    assert all({"source_column", "kind"} <= set(e) for e in raw)
    assert manifest_width(m) == 71


def test_rhc_prepare_on_synthetic_file(tmp_path):
    ds = rhc_prepare(_fake_rhc(tmp_path / "rhc.csv"))
    assert ds.d == manifest_width(load_manifest())
    assert set(np.unique(ds.Y)) <= {0.0, 1.0}
    assert set(np.unique(ds.W)) <= {0.0, 1.0}


def test_rhc_renamed_column(tmp_path):
    with pytest.raises(SchemaMismatch):
        rhc_prepare(_fake_rhc(tmp_path / "rhc.csv", rename=("aps1", "aps_one")))


# ---------------------------------------------------------------- synthetic designs

@given(st.sampled_from(DGP_NAMES), st.integers(0, 2**32))
def test_oracle_sample_consistency(name, seed):
    s = generate_synthetic(named_dgp(name, 300), seed)
    ds = s.dataset
    np.testing.assert_array_equal(ds.Y, np.where(ds.W == 1, s.y1, s.y0))
    assert ds.column_names == tuple(f"x{j + 1}" for j in range(ds.d))
    if s.spec.link == "clipped_linear":
        assert s.e_true.min() >= 0.02 and s.e_true.max() <= 0.98


def test_treated_share_matches_propensity():
    s = generate_synthetic(named_dgp("confounded_linear", 4000), 2)
    e = s.e_true
    se = np.sqrt(np.sum(e * (1 - e))) / e.size
    assert abs(e.mean() - s.dataset.W.mean()) < 3 * se


def test_seed_separation():
    spec = named_dgp("confounded_linear", 200)
    a, b, c = (generate_synthetic(spec, k) for k in (1, 1, 2))
    assert a.dataset.W.tobytes() == b.dataset.W.tobytes()
    assert a.dataset.W.tobytes() != c.dataset.W.tobytes()


def test_population_constants_match_simulation():
    spec = named_dgp("poor_overlap", 200_000)
    s = generate_synthetic(spec, 3)
    pop = spec.population()
    assert pop["p"] == pytest.approx(s.e_true.mean(), abs=0.005)
    att = np.mean((s.mu1_true - s.mu0_true)[s.dataset.W == 1])
    assert pop["att"] == pytest.approx(att, abs=0.01)
    naive = estimate_naive(s.dataset).value - pop["ate"]
    assert pop["naive_bias"] == pytest.approx(naive, abs=0.02)


def test_pinned_randomized_noiseless():
    spec = SynthSpec(200, 3, (1.0, -1.0, 0.5), (0.0, 0.0, 0.0), 2.0, link="clipped_linear", noise_sd=0.0)
    vals = np.array([estimate_naive(generate_synthetic(spec, s).dataset).value for s in range(300)])
    assert abs(vals.mean() - 2.0) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)


def test_no_outcome_signal_means_no_bias():
    spec = SynthSpec(400, 3, (0.0, 0.0, 0.0), (1.0, -1.0, 0.5), 1.0)
    assert spec.population()["naive_bias"] == 0.0
    vals = np.array([estimate_naive(generate_synthetic(spec, s).dataset).value for s in range(200)])
    assert abs(vals.mean() - 1.0) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)


def test_unknown_dgp():
    with pytest.raises(UnknownDgp):
        named_dgp("nope", 10)
