import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from atekit import estimators
from atekit.core import (
    ATE,
    AllSplitsFailed,
    Dataset,
    EmptyArm,
    ForestConfig,
    LinmodConfig,
    RunConfig,
    TooManyFailedReplicates,
    ValidationError,
)
from atekit.dataio import SynthSpec, generate_synthetic, named_dgp
from atekit.diagnostics import (
    ROW_FIELDS,
    aggregate_bias,
    bias_function_summary,
    bias_values,
    bootstrap_se,
    build_report,
    covariate_split_sensitivity,
    half_sample_bias,
    summarize_bias,
)

FAST = RunConfig(bootstrap_reps=30, half_sample_reps=10, linmod=LinmodConfig(n_lambda=20),
                 forest=ForestConfig(n_trees=40))


def constant(ds, seed):
    return 0.7


def naive(ds, seed):
    return estimators.estimate_naive(ds).value


def _balanced_unit_variance(n=400, seed=0):
    r = np.random.default_rng(seed)
    W = np.r_[np.ones(n // 2), np.zeros(n - n // 2)]
    X = r.standard_normal((n, 3))
    Y = r.standard_normal(n) + W
    return Dataset.from_arrays(X, W, Y)


# ---------------------------------------------------------------- bootstrap

def test_bootstrap_naive_matches_closed_form():
    ds = _balanced_unit_variance()
    se = bootstrap_se("naive", ds, FAST, B=1000, seed=1)
    assert se == pytest.approx(np.sqrt(2 / 200), rel=0.15)


def test_bootstrap_constant_outcome_zero():
    ds = _balanced_unit_variance().with_outcome(np.full(400, 3.0))
    assert bootstrap_se("naive", ds, FAST, B=50, seed=0) == 0.0


def test_bootstrap_requires_two_reps():
    with pytest.raises(ValidationError):
        bootstrap_se(constant, _balanced_unit_variance(), FAST, B=1)


def test_bootstrap_failure_accounting():
    calls = {"n": 0}

    def flaky(ds, seed):
        calls["n"] += 1
        if seed % 3 == 0:
            raise EmptyArm("boom")
        return float(ds.Y.mean())

    ds = _balanced_unit_variance(40)
    with pytest.raises(TooManyFailedReplicates):
        bootstrap_se(flaky, ds, FAST, B=60, seed=0)

    def rare(ds, seed):
        if seed % 50 == 0:
            raise EmptyArm("boom")
        return float(ds.Y.mean())

    se, reps, failed = bootstrap_se(rare, ds, FAST, B=60, seed=0, return_replicates=True)
    assert failed == int(np.isnan(reps).sum()) and failed <= 6
    assert se > 0


def test_bootstrap_independent_of_thread_count(monkeypatch):
    ds = _balanced_unit_variance(100)
    monkeypatch.setenv("ATE_TOOLKIT_THREADS", "1")
    a = bootstrap_se("naive", ds, FAST, B=40, seed=3)
    monkeypatch.setenv("ATE_TOOLKIT_THREADS", "3")
    b = bootstrap_se("naive", ds, FAST, B=40, seed=3)
    assert a == b


# ---------------------------------------------------------------- half-sample bias

def test_sbb_constant_is_exactly_zero():
    ds = _balanced_unit_variance(41)
    assert half_sample_bias(constant, ds, FAST, reps=20, seed=0) == 0.0


def test_sbb_naive_randomized_small():
    s = generate_synthetic(named_dgp("randomized", 1000), 4)
    sbb = half_sample_bias("naive", s.dataset, FAST.replace(bootstrap_reps=200), reps=200, seed=2)
    assert abs(sbb) < 0.1


def test_sbb_odd_sizes():
    sizes = []

    def record(ds, seed):
        sizes.append(ds.n)
        return 0.0

    half_sample_bias(record, _balanced_unit_variance(41), FAST, reps=3, seed=0, se=1.0,
                     full_estimate=0.0)
    assert sorted(set(sizes)) == [20, 21]


def test_sbb_needs_four_units():
    ds = Dataset.from_arrays([[0.0], [1.0], [2.0]], [0, 1, 1], [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        half_sample_bias(constant, ds, FAST, reps=2, seed=0)


# ---------------------------------------------------------------- covariate splits

def test_covsplit_constant_estimator():
    ds = _balanced_unit_variance(100)
    res = covariate_split_sensitivity(constant, ds, FAST)
    assert all(v == 0.7 for v in res.per_covariate.values())
    assert res.std == 0.0 and res.mean == 0.7


def test_covsplit_duplicated_columns_identical():
    ds = _balanced_unit_variance(200, seed=5)
    X = np.column_stack([ds.X, ds.X[:, 1]])
    dup = Dataset.from_arrays(X, ds.W, ds.Y, ["a", "b", "c", "b_copy"])
    res = covariate_split_sensitivity("naive", dup, FAST)
    assert res.per_covariate["b"] == res.per_covariate["b_copy"]


def test_covsplit_skips_constant_and_rare():
    ds = _balanced_unit_variance(200, seed=6)
    rare = np.zeros(200)
    rare[:5] = 1.0
    X = np.column_stack([ds.X, np.ones(200), rare])
    d2 = Dataset.from_arrays(X, ds.W, ds.Y, ["a", "b", "c", "const", "rare"])
    res = covariate_split_sensitivity("naive", d2, FAST)
    assert set(res.skipped) == {"const", "rare"}
    assert len(res.per_covariate) == 3


def test_covsplit_all_fail():
    ds = _balanced_unit_variance(40)
    X = np.ones((40, 2))
    with pytest.raises(AllSplitsFailed):
        covariate_split_sensitivity("naive", Dataset.from_arrays(X, ds.W, ds.Y), FAST)


# ---------------------------------------------------------------- bias function

@given(arrays(np.float64, st.integers(2, 300), elements=st.floats(-50, 50)), st.integers(1, 40))
def test_summary_invariants(b, bins):
    s = summarize_bias(b, bins, 1.0, 0.5)
    q = [s.q025, s.q25, s.median, s.q75, s.q975]
    assert all(x <= y for x, y in zip(q, q[1:]))
    assert s.mean == pytest.approx(float(np.mean(b)), abs=1e-10)
    assert sum(c for _, _, c in s.histogram) == b.size
    assert len(s.histogram) == bins
    assert s.histogram[0][0] <= b.min() and s.histogram[-1][1] >= b.max()


def test_summary_quantiles_type7():
    b = np.arange(1.0, 11.0)
    s = summarize_bias(b, 5, 1.0, 0.5)
    assert s.q25 == pytest.approx(3.25)
    assert s.q975 == pytest.approx(9.775)


def test_bias_function_randomized_flat():
    s = generate_synthetic(named_dgp("randomized", 2000), 7)
    summary = bias_function_summary(s.dataset, FAST, seed=1)
    assert abs(summary.mean) < 0.02
    assert summary.b_values.size == 2000


def test_bias_function_exact_zero_with_forced_propensity():
    s = generate_synthetic(named_dgp("randomized", 300), 8)
    ds = s.dataset
    phat = ds.n_treated / ds.n
    summary = bias_function_summary(ds, FAST, seed=0, ehat=np.full(ds.n, phat))
    assert np.all(summary.b_values == 0.0)


def test_bias_function_degenerate_outcome():
    ds = _balanced_unit_variance(100).with_outcome(np.full(100, 2.0))
    summary = bias_function_summary(ds, FAST, seed=0)
    assert summary.degenerate
    assert np.all(summary.b_values == 0.0)
    assert aggregate_bias(summary).B == 0.0


def test_aggregate_zero_and_validation():
    s = summarize_bias(np.zeros(10), 3, 1.0, 0.4)
    assert aggregate_bias(s).B == 0.0
    with pytest.raises(ValidationError):
        aggregate_bias(s, phat=1.0)


def test_aggregate_product_formula_linear_design():
    spec = SynthSpec(5000, 6, (0.5, 0.5, 0.0, 0.3, 0.0, 0.0), (0.3, 0.0, 0.5, 0.3, 0.0, 0.0),
                     1.0, link="clipped_linear", link_scale=0.3)
    pop = spec.population()
    target = pop["cov_e_xbeta"] / (pop["p"] * (1 - pop["p"]))
    vals = []
    for r in range(200):
        smp = generate_synthetic(spec, r)
        ds = smp.dataset
        phat = ds.n_treated / ds.n
        ystd = float(np.std(ds.Y))
        b = bias_values(smp.e_true, smp.mu0_true, smp.mu1_true, phat) / ystd
        vals.append(aggregate_bias(summarize_bias(b, 10, ystd, phat)).B)
    vals = np.array(vals)
    assert abs(vals.mean() - target) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)
    # little mass is clipped, so the realized link sits close to the plain product formula
    assert target == pytest.approx(0.3 * 0.24 / 0.25, rel=0.03)


def test_aggregate_matches_naive_minus_dre():
    # b mixes both arms' outcome models, so the matching reference is the ATE
    s = generate_synthetic(named_dgp("confounded_linear", 8000), 9)
    ds = s.dataset
    cfg = FAST.replace(forest=ForestConfig(n_trees=150))
    B = aggregate_bias(bias_function_summary(ds, cfg, seed=0)).B
    dre = estimators.estimate("dre", ds, cfg, 0, ATE).value
    gap = estimators.estimate_naive(ds).value - dre
    assert np.sign(B) == np.sign(gap)
    assert abs(B - gap) <= 0.3 * abs(gap)


# ---------------------------------------------------------------- report

def _tiny(n=20, seed=0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, 2))
    W = np.tile([0.0, 1.0], n // 2)
    Y = W + X[:, 0] + 0.5 * r.standard_normal(n)
    return Dataset.from_arrays(X, W, Y)


def test_report_smoke_twenty_points():
    cfg = FAST.replace(forest=ForestConfig(n_trees=20, min_leaf=2))
    rep = build_report(_tiny(), ["naive"], cfg, 0)
    doc = json.loads(rep.dumps())
    assert len(doc["rows"]) == 1
    row = doc["rows"][0]
    assert tuple(row) == ROW_FIELDS
    assert all(isinstance(row[k], float) for k in ROW_FIELDS[1:])
    assert doc["meta"]["failures"] == []
    assert {"seed", "config_hash", "skipped_covariates"} <= set(doc["meta"])
    assert {"ate_bound", "weighted_bound", "ratio"} <= set(doc["bounds"])


def test_report_is_deterministic():
    ds = _tiny(60, 1)
    a = build_report(ds, ["naive", "ols", "dre"], FAST, 4).dumps()
    b = build_report(ds, ["naive", "ols", "dre"], FAST, 4).dumps()
    assert a == b


def test_report_records_failures(monkeypatch):
    def broken(*args, **kwargs):
        raise EmptyArm("synthetic failure")

    monkeypatch.setitem(estimators.ESTIMATORS, "ols", broken)
    rep = build_report(_tiny(40), ["naive", "ols"], FAST, 0, with_bias_summary=False)
    doc = json.loads(rep.dumps())
    assert [r["method"] for r in doc["rows"]] == ["naive", "ols"]
    assert doc["rows"][1]["estimate"] is None
    assert any(f["method"] == "ols" for f in doc["meta"]["failures"])
    assert doc["rows"][0]["estimate"] is not None


def test_report_requires_methods():
    with pytest.raises(ValidationError):
        build_report(_tiny(), [], FAST, 0)


def test_histogram_csv():
    s = summarize_bias(np.linspace(-1, 1, 50), 4, 1.0, 0.5)
    lines = s.histogram_csv().strip().splitlines()
    assert lines[0] == "bin_left,bin_right,count"
    assert sum(int(line.split(",")[2]) for line in lines[1:]) == 50
