import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lrlasso.data import (ONE_NAME, Dataset, augment_ones, design_from_logs, expand_ratios,
                          load_csv, log_design, pair_index, write_csv)
from lrlasso.exceptions import DegenerateColumnError, DomainError, ParseError


def _ds(X, y=None, names=None, **kw):
    X = np.asarray(X, dtype=float)
    y = np.zeros(X.shape[0]) if y is None else y
    names = names or tuple(f"f{j}" for j in range(X.shape[1]))
    return Dataset(X, y, names, **kw)


def test_load_csv_identity(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,y\n1.5,2,0.1\n3,4,0.2\n5,6.25,0.3\n")
    d = load_csv(f, "y")
    np.testing.assert_array_equal(d.X, [[1.5, 2], [3, 4], [5, 6.25]])
    np.testing.assert_array_equal(d.y, [0.1, 0.2, 0.3])
    assert d.feature_names == ("a", "b")


def test_load_csv_pseudocount(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,y\n0,2,1\n3,4,2\n")
    d = load_csv(f, "y", pseudocount=1.0)
    assert d.X[0, 0] == 1.0
    assert d.X[1, 1] == 5.0
    with pytest.raises(DomainError, match="row 2.*'a'"):
        load_csv(f, "y")


def test_load_csv_parse_errors(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,y\n1,2,3\n1,x,3\n")
    with pytest.raises(ParseError, match="row 3.*'b'"):
        load_csv(f, "y")
    f.write_text("a,b,y\n1,2,3\n1,2\n")
    with pytest.raises(ParseError, match="row 3"):
        load_csv(f, "y")
    f.write_text("a,b,y\n1,2,3\n")
    with pytest.raises(ParseError, match="response column"):
        load_csv(f, "z")
    f.write_text("")
    with pytest.raises(ParseError, match="empty"):
        load_csv(f, "y")


def test_load_csv_groups_and_column_order(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("g,c,y,a\np1,1,0,2\np1,2,1,3\np2,3,0,4\n")
    d = load_csv(f, "y", group_column="g", family="binomial")
    assert d.feature_names == ("c", "a")
    assert list(d.group_ids) == ["p1", "p1", "p2"]
    assert d.family == "binomial"


def test_dataset_validation():
    with pytest.raises(DomainError):
        _ds([[1.0, 2.0]])                      # n < 2
    with pytest.raises(DomainError):
        _ds([[1.0], [2.0]])                    # p < 2
    with pytest.raises(DomainError, match="duplicate"):
        _ds([[1, 2], [3, 4]], names=("a", "a"))
    with pytest.raises(DomainError, match="non-positive"):
        _ds([[1, 0], [3, 4]])
    with pytest.raises(DomainError, match="0/1"):
        _ds([[1, 2], [3, 4]], y=np.array([0.0, 0.5]), family="binomial")
    with pytest.raises(DomainError, match="family"):
        _ds([[1, 2], [3, 4]], family="poisson")
    d = _ds([[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        d.X[0, 0] = 5.0


def test_log_design_examples():
    W = log_design(_ds(np.ones((3, 2))), center=False)
    np.testing.assert_array_equal(W.W, 0.0)
    W = log_design(_ds(np.full((3, 2), math.e)), center=False)
    np.testing.assert_allclose(W.W, 1.0, rtol=0, atol=1e-15)


def test_log_design_center_scale(rng):
    X = np.exp(rng.standard_normal((20, 4)) * 2 + 3)
    W = log_design(_ds(X), center=True, scale=True)
    np.testing.assert_allclose(W.W.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(W.W.std(axis=0, ddof=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(W.raw(), np.log(X), atol=1e-12)
    np.testing.assert_allclose(W.transform(np.log(X)), W.W, atol=1e-12)
    X[:, 2] = 7.0
    with pytest.raises(DegenerateColumnError):
        log_design(_ds(X), scale=True)
    # a constant column is fine without scaling
    assert log_design(_ds(X)).W.shape == (20, 4)


def test_expand_ratios_examples(rng):
    L = rng.standard_normal((5, 2))
    Z, pairs = expand_ratios(L)
    assert pairs == [(0, 1)]
    np.testing.assert_array_equal(Z[:, 0], L[:, 0] - L[:, 1])
    Z, pairs = expand_ratios(rng.standard_normal((5, 4)), support={2, 0, 1})
    assert pairs == [(0, 1), (0, 2), (1, 2)]
    assert Z.shape == (5, 3)
    Z, pairs = expand_ratios(rng.standard_normal((5, 30)))
    assert Z.shape[1] == 435 == math.comb(30, 2)
    assert pairs == sorted(pairs) and all(j < k for j, k in pairs)
    with pytest.raises(IndexError):
        expand_ratios(L, support=[0, 2])
    assert pair_index(3) == [(0, 1), (0, 2), (1, 2)]


def test_expand_ratios_accepts_log_design(rng):
    X = np.exp(rng.standard_normal((6, 3)))
    W = log_design(_ds(X), center=False)
    Z, _ = expand_ratios(W)
    np.testing.assert_allclose(Z[:, 1], np.log(X[:, 0] / X[:, 2]), atol=1e-13)


def test_augment_ones(rng):
    d = _ds(np.exp(rng.standard_normal((4, 2))))
    a = augment_ones(d)
    assert a.p == 3 and a.feature_names[-1] == ONE_NAME
    np.testing.assert_array_equal(a.X[:, -1], 1.0)
    Z, pairs = expand_ratios(log_design(a, center=False))
    assert Z.shape[1] == 3
    np.testing.assert_allclose(Z[:, pairs.index((0, 2))], np.log(d.X[:, 0]), atol=1e-14)
    np.testing.assert_allclose(Z[:, pairs.index((1, 2))], np.log(d.X[:, 1]), atol=1e-14)
    with pytest.raises(DomainError):
        augment_ones(a)


def test_subset_keeps_groups():
    d = _ds([[1, 2], [3, 4], [5, 6]], group_ids=np.array(["a", "b", "a"]))
    s = d.subset([0, 2])
    assert s.n == 2 and list(s.group_ids) == ["a", "a"]


positive = st.floats(1e-3, 1e3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (5, 4), elements=positive), arrays(float, 5, elements=positive))
def test_row_scaling_leaves_ratios_unchanged(X, c):
    Z1, _ = expand_ratios(np.log(X))
    Z2, _ = expand_ratios(np.log(X * c[:, None]))
    np.testing.assert_allclose(Z1, Z2, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (4, 3), elements=positive), arrays(float, 4, elements=st.floats(-1e6, 1e6)))
def test_csv_round_trip(tmp_path_factory, X, y):
    d = Dataset(X, y, ("a", "b", "c"), group_ids=np.array(["g1", "g2", "g1", "g3"]))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, path, group_column="grp")
    back = load_csv(path, "y", group_column="grp")
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.y, d.y)
    assert list(back.group_ids) == list(d.group_ids)


def test_design_from_logs_names():
    W = design_from_logs(np.zeros((3, 2)) + [[0.0, 1.0]], feature_names=("u", "v"))
    assert W.feature_names == ("u", "v")
    assert W.n == 3 and W.p == 2
