import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from atekit.core import (
    ATE,
    ATT,
    OVERLAP,
    Dataset,
    Estimand,
    EstimandKind,
    EstimationError,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    NuisanceEstimates,
    ParseError,
    PointEstimate,
    RunConfig,
    ValidationError,
    child_seed,
    validate_dataset,
    weight_function,
)


def test_four_row_dataset():
    rows = [{"x": 0, "w": 0, "y": 1}, {"x": 0, "w": 0, "y": 3},
            {"x": 1, "w": 1, "y": 2}, {"x": 1, "w": 1, "y": 4}]
    ds = validate_dataset(rows)
    assert (ds.n, ds.d) == (4, 1)
    assert ds.column_names == ("x",)
    np.testing.assert_array_equal(ds.Y, [1, 3, 2, 4])


def test_column_order_preserved():
    rows = [{"b": 1, "y": 0, "a": 2, "w": 0}, {"b": 3, "y": 1, "a": 4, "w": 1}]
    assert validate_dataset(rows).column_names == ("b", "a")


def test_invalid_rows():
    base = [{"x": 0.0, "w": 0, "y": 1.0}, {"x": 1.0, "w": 1, "y": 2.0}]
    with pytest.raises(NonBinaryTreatment):
        validate_dataset([base[0], {"x": 1.0, "w": 2, "y": 2.0}])
    with pytest.raises(NonFiniteValue):
        validate_dataset([base[0], {"x": 1.0, "w": 1, "y": math.nan}])
    with pytest.raises(ParseError):
        validate_dataset([base[0], {"x": "abc", "w": 1, "y": 2.0}])
    with pytest.raises(MissingColumn):
        validate_dataset(base, outcome="z")


def test_arrays_are_frozen():
    ds = Dataset.from_arrays([[0.0], [1.0]], [0, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        ds.Y[0] = 5.0


def test_too_few_rows_and_empty_x():
    with pytest.raises(ValidationError):
        Dataset.from_arrays([[0.0]], [1], [1.0])
    with pytest.raises(ValidationError):
        Dataset.from_arrays(np.empty((3, 0)), [0, 1, 1], [1, 2, 3])
    ds = Dataset.from_arrays(np.empty((3, 0)), [0, 1, 1], [1, 2, 3], allow_empty_x=True)
    assert ds.d == 0


@given(
    st.integers(0, 19),
    st.sampled_from(["X", "W", "Y"]),
    st.sampled_from([math.nan, math.inf, -math.inf, 2.0, -1.0, 0.5]),
)
def test_single_corruption_raises_one_specific_error(row, field, bad):
    r = np.random.default_rng(row)
    X = r.standard_normal((20, 3))
    W = np.tile([0.0, 1.0], 10)
    Y = r.standard_normal(20)
    arrs = {"X": X, "W": W, "Y": Y}
    if field == "X":
        X[row, 1] = bad
    else:
        arrs[field][row] = bad
    finite = math.isfinite(bad)
    if field in ("X", "Y") and finite:
        Dataset.from_arrays(X, W, Y)
        return
    expected = NonFiniteValue if not finite else NonBinaryTreatment
    with pytest.raises(expected) as info:
        Dataset.from_arrays(X, W, Y)
    assert type(info.value) is expected


def test_weight_function_examples():
    np.testing.assert_allclose(weight_function(ATE, [0.3, 0.7]), [1, 1])
    np.testing.assert_allclose(weight_function(OVERLAP, [0.5, 0.1]), [0.25, 0.09])
    trim = Estimand(EstimandKind.TRIMMED, 0.1)
    np.testing.assert_array_equal(weight_function(trim, [0.05, 0.5, 0.95]), [0, 1, 0])
    np.testing.assert_allclose(weight_function(ATT, [0.2, 0.6]), [0.2, 0.6])


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0.0, 1.0)))
def test_weight_function_ranges(e):
    ov = weight_function(OVERLAP, e)
    tr = weight_function(Estimand.parse("trimmed:0.2"), e)
    assert np.all((ov >= 0) & (ov <= 0.25))
    assert np.all((tr == 0) | (tr == 1))
    dist = np.abs(e - 0.5)
    assert dist[np.argmax(ov)] == dist.min()


def test_estimand_parse():
    assert Estimand.parse("ATE") == ATE
    assert Estimand.parse("att") == ATT
    assert Estimand.parse("overlap") == OVERLAP
    assert Estimand.parse("trimmed:0.05").alpha == 0.05
    for bad in ("trimmed:0.6", "trimmed:0", "cate"):
        with pytest.raises(ValidationError):
            Estimand.parse(bad)
    with pytest.raises(ValidationError):
        Estimand(EstimandKind.ATE, 0.1)


def test_nuisance_build_clips_and_sets_phat():
    W = np.array([0, 1, 1, 0, 1.0])
    n = NuisanceEstimates.build([0.0, 0.5, 1.0, 0.2, 0.999], 0.0, 1.0, W, clip_eta=0.05)
    assert n.ehat.min() == 0.05 and n.ehat.max() == 0.95
    assert n.phat == 3 / 5
    assert not n.has_variances
    v = n.with_variances(np.full(5, -1.0), np.ones(5))
    assert v.has_variances and v.sigma2_0hat.min() == 0.0
    with pytest.raises(ValidationError):
        NuisanceEstimates(np.array([0.0, 0.5]), np.zeros(2), np.zeros(2), 0.5)


def test_point_estimate_invariants():
    with pytest.raises(EstimationError):
        PointEstimate(math.nan, 0.1, "naive", ATE, 10)
    with pytest.raises(EstimationError):
        PointEstimate(1.0, -0.1, "naive", ATE, 10)
    pe = PointEstimate(1.0, 0.1, "naive", ATT, 10)
    assert pe.to_json()["estimand"] == {"kind": "ATT"}


def test_run_config_validation_and_hash():
    cfg = RunConfig()
    assert cfg.config_hash() == RunConfig().config_hash()
    assert cfg.config_hash() != cfg.replace(seed=1).config_hash()
    for bad in ({"dml_folds": 1}, {"trim_alpha": 0.5}, {"bootstrap_reps": 0},
                {"clip_eta": 0.0}, {"nuisance_family": "svm"}):
        with pytest.raises(ValidationError):
            RunConfig(**bad)


def test_child_seed_streams_are_distinct_and_stable():
    a = child_seed(7, 1, 2)
    assert a == child_seed(7, 1, 2)
    assert len({child_seed(7, 1, k) for k in range(100)}) == 100
    assert 0 <= a < 2**63
