import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lrlasso.data import ONE_NAME, Dataset, design_from_logs, expand_ratios
from lrlasso.exceptions import DomainError, NotAContrastError
from lrlasso.logratio import (ContrastCoefficients, PairCoefficients, contrast_to_pairs,
                              fit_single_stage, fit_two_stage, linear_predictor, logistic_refit,
                              model_from_json, model_to_dict, model_to_json, pairs_to_contrast,
                              predict, ratio_table, two_stage_path)
from lrlasso.solver import gamma_max, prox_grad_lasso

from conftest import abs_gaussian_logs, b_of_theta_lstsq

# three ratio representations of 2 log x1 + log x2 - 2 log x3 - log x4 (0-based keys)
DECOMPOSITIONS = {
    "a": {(0, 2): 2.0, (1, 3): 1.0},
    "b": {(0, 2): 1.5, (0, 3): 0.5, (1, 2): 0.5, (1, 3): 0.5},
    "c": {(0, 2): 1.7, (0, 3): 0.3, (1, 2): 0.3, (1, 3): 0.7},
}


def test_pairs_to_contrast_examples():
    assert np.all(pairs_to_contrast(PairCoefficients({}, 4)).beta == 0)
    beta = pairs_to_contrast(PairCoefficients({(0, 2): 2, (1, 3): 1}, 4)).beta
    np.testing.assert_array_equal(beta, [2, 1, -2, -1])
    beta = pairs_to_contrast(PairCoefficients({(0, 1): 2.0, (2, 3): 1.0}, 4)).beta
    np.testing.assert_array_equal(beta, [2, -2, 1, -1])


@pytest.mark.parametrize("name", sorted(DECOMPOSITIONS))
def test_non_uniqueness_witness(name):
    theta = PairCoefficients(DECOMPOSITIONS[name], 4)
    np.testing.assert_allclose(pairs_to_contrast(theta).beta, [2, 1, -2, -1], atol=1e-15)
    assert theta.l1_norm == pytest.approx(3.0, abs=1e-15)


def test_contrast_to_pairs_examples():
    t = contrast_to_pairs(np.array([1.0, -1.0]))
    assert t.pairs == {(0, 1): 1.0}
    t = contrast_to_pairs(np.array([2.0, 1.0, -2.0, -1.0]))
    expected = {(0, 2): 4 / 3, (0, 3): 2 / 3, (1, 2): 2 / 3, (1, 3): 1 / 3}
    assert t.pairs.keys() == expected.keys()
    for key, v in expected.items():
        assert t.pairs[key] == pytest.approx(v, abs=1e-15)
    assert t.l1_norm == pytest.approx(3.0, abs=1e-14)
    with pytest.raises(NotAContrastError):
        contrast_to_pairs(np.array([1.0, 1.0, -1.0]))
    assert contrast_to_pairs(np.zeros(3)).pairs == {}


def test_contrast_to_pairs_orientation():
    # positive feature with the larger index gives a negative coefficient on (low, high)
    t = contrast_to_pairs(np.array([-1.0, 0.0, 1.0]))
    assert t.pairs == {(0, 2): -1.0}


def test_pair_coefficients_validation():
    with pytest.raises(DomainError):
        PairCoefficients({(1, 0): 1.0}, 3)
    with pytest.raises(DomainError):
        PairCoefficients({(0, 3): 1.0}, 3)
    t = PairCoefficients({(0, 1): 0.0, (1, 2): 2.0}, 3)
    assert t.pairs == {(1, 2): 2.0}


def _sum_zero(v):
    return v - v.mean()


vectors = st.integers(2, 50).flatmap(
    lambda p: arrays(float, p, elements=st.floats(-100, 100, allow_nan=False)))


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_round_trip_and_half_norm(v):
    beta = _sum_zero(v)
    beta[np.abs(beta) < 1e-9] = 0.0
    beta = _sum_zero(beta)
    t = contrast_to_pairs(beta)
    back = pairs_to_contrast(t).beta
    assert np.abs(back - beta).max() <= 1e-10 * (1 + np.abs(beta).max())
    assert abs(2 * t.l1_norm - np.abs(beta).sum()) <= 1e-10 * (1 + np.abs(beta).sum())
    # only positive-negative pairs
    for j, k in t.pairs:
        assert beta[j] * beta[k] < 0


@st.composite
def thetas(draw):
    p = draw(st.integers(2, 12))
    pairs = [(j, k) for j in range(p) for k in range(j + 1, p)]
    keys = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    vals = draw(st.lists(st.floats(-10, 10, allow_nan=False), min_size=len(keys),
                         max_size=len(keys)))
    return PairCoefficients(dict(zip(keys, vals)), p)


@settings(max_examples=200, deadline=None)
@given(thetas())
def test_b_of_theta_invariants(theta):
    beta = pairs_to_contrast(theta).beta
    assert abs(beta.sum()) <= 1e-10 * (1 + theta.l1_norm)
    assert np.abs(beta).sum() <= 2 * theta.l1_norm + 1e-10
    # independent reference: the beta reproducing Z theta on a random design
    ref = b_of_theta_lstsq(theta.pairs, theta.p)
    np.testing.assert_allclose(beta, ref, atol=1e-8 * (1 + theta.l1_norm))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(3, 10))
def test_norm_lower_bound_under_null_space_moves(seed, p):
    g = np.random.default_rng(seed)
    beta = _sum_zero(g.standard_normal(p))
    base = contrast_to_pairs(beta)
    theta = dict(base.pairs)
    # add a cycle (i,j) + (j,k) - (i,k): it lies in the null space of b
    for _ in range(3):
        i, j, k = sorted(g.choice(p, 3, replace=False))
        a = g.normal()
        for key, v in (((i, j), a), ((j, k), a), ((i, k), -a)):
            theta[key] = theta.get(key, 0.0) + v
    moved = PairCoefficients(theta, p)
    np.testing.assert_allclose(pairs_to_contrast(moved).beta, beta, atol=1e-10)
    assert moved.l1_norm >= np.abs(beta).sum() / 2 - 1e-10


@settings(max_examples=50, deadline=None)
@given(thetas(), st.integers(0, 2**31))
def test_theta_and_beta_give_same_fit(theta, seed):
    X = np.exp(np.random.default_rng(seed).standard_normal((7, theta.p)))
    beta = pairs_to_contrast(theta).beta
    np.testing.assert_allclose(linear_predictor(theta, X), np.log(X) @ beta, atol=1e-10 * (1 + theta.l1_norm))


def _exp1(rng, n=100, p=30, s=2.0):
    L = abs_gaussian_logs(rng, n, p)
    y = 2 * s * (L[:, 0] - L[:, 1]) + s * (L[:, 2] - L[:, 3]) + rng.standard_normal(n)
    return design_from_logs(L), y, np.exp(L)


def test_single_stage_above_threshold_is_empty(rng):
    W, y, _ = _exp1(rng)
    lam = 2 * gamma_max(W, y)
    theta, contrast, rep = fit_single_stage(W, y, lam * 1.0001)
    assert theta.pairs == {}
    assert theta.intercept == pytest.approx(y.mean(), abs=1e-12)
    assert rep.gamma == pytest.approx(lam * 1.0001 / 2)


def test_single_stage_matches_expanded_lasso(rng):
    W, y, X = _exp1(rng, n=40, p=6)
    lam = 0.3 * 2 * gamma_max(W, y)
    theta, contrast, rep = fit_single_stage(W, y, lam)
    Z, _ = expand_ratios(np.log(X))
    _, mu, val, _ = prox_grad_lasso(Z, y, lam)
    assert abs(rep.objective - val) <= 1e-5 * abs(val)
    # canonical theta reproduces the fit and attains the lasso objective in theta space
    fitted = predict(theta, X)
    np.testing.assert_allclose(fitted, contrast.intercept + np.log(X) @ contrast.beta, atol=1e-10)
    obj_theta = 0.5 * np.sum((y - fitted) ** 2) + lam * theta.l1_norm
    assert abs(obj_theta - val) <= 1e-5 * abs(val)


def test_single_stage_unpaired(rng):
    L = abs_gaussian_logs(rng, 80, 5)
    y = 1.5 * L[:, 0] + rng.standard_normal(80) * 0.3
    W = design_from_logs(L, feature_names=tuple("abcde"))
    theta, contrast, _ = fit_single_stage(W, y, 0.05 * 2 * gamma_max(W, y), include_unpaired=True)
    assert theta.p == 6 and theta.feature_names[-1] == ONE_NAME
    assert (0, 5) in theta.pairs                     # log(x_a) enters on its own
    assert "log(X_a) ->" in ratio_table(theta)
    X = np.exp(L)
    np.testing.assert_allclose(predict(theta, X), contrast.intercept + L @ contrast.beta[:5], atol=1e-10)


def test_two_stage_trivial_cases(rng):
    W, y, _ = _exp1(rng)
    theta, rep = fit_two_stage(W, y, 5.0, 0)
    assert theta.pairs == {} and theta.intercept == pytest.approx(y.mean())
    theta, rep = fit_two_stage(W, y, 3 * gamma_max(W, y), 5)
    assert theta.pairs == {}
    assert rep.warnings
    with pytest.raises(DomainError):
        fit_two_stage(W, y, 1.0, -1)


def test_two_stage_recovers_two_ratios(rng):
    W, y, X = _exp1(rng, s=2.0)
    theta, rep = fit_two_stage(W, y, 0.2 * 2 * gamma_max(W, y), 2)
    assert set(theta.pairs) == {(0, 1), (2, 3)}
    assert theta.pairs[(0, 1)] == pytest.approx(4.0, abs=0.5)
    assert theta.pairs[(2, 3)] == pytest.approx(2.0, abs=0.5)
    # unpenalized least-squares refit on the two ratios
    F = np.column_stack([np.log(X[:, 0] / X[:, 1]), np.log(X[:, 2] / X[:, 3])])
    A = np.column_stack([np.ones(len(y)), F])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    assert theta.intercept == pytest.approx(coef[0], abs=1e-9)
    assert theta.pairs[(0, 1)] == pytest.approx(coef[1], abs=1e-9)


def test_two_stage_conservative_targets_stage1_fit(rng):
    W, y, X = _exp1(rng, s=2.0)
    lam = 0.2 * 2 * gamma_max(W, y)
    models, rep = two_stage_path(W, y, lam, [1, 2, 30], conservative=True)
    assert len(models[1].pairs) == 1
    assert set(models[2].pairs) == {(0, 1), (2, 3)}
    # enough steps reproduce the stage-1 fit exactly
    _, contrast, _ = fit_single_stage(W, y, lam)
    stage1 = contrast.intercept + np.log(X) @ contrast.beta
    np.testing.assert_allclose(predict(models[30], X), stage1, atol=1e-8)


def test_binomial_two_stage_refit(rng):
    L = abs_gaussian_logs(rng, 300, 8)
    eta = 2.5 * (L[:, 0] - L[:, 1])
    y = (rng.random(300) < 1 / (1 + np.exp(-eta))).astype(float)
    W = design_from_logs(L)
    theta, rep = fit_two_stage(W, y, 0.3 * 2 * gamma_max(W, y, "binomial"), 1, family="binomial")
    assert list(theta.pairs) == [(0, 1)]
    p = predict(theta, np.exp(L))
    assert np.all((p > 0) & (p < 1))
    mu, c, ok = logistic_refit(np.log(np.exp(L[:, [0]]) / np.exp(L[:, [1]])), y)
    assert ok
    assert theta.pairs[(0, 1)] == pytest.approx(c[0], rel=1e-8)


def test_predict_examples():
    X = np.exp(np.random.default_rng(1).standard_normal((4, 3)))
    np.testing.assert_allclose(predict(PairCoefficients({}, 3, 1.25), X), 1.25)
    theta = PairCoefficients({(0, 1): 1.0}, 3)
    X2 = X.copy()
    X2[:, 0] = math.e * X2[:, 1]
    np.testing.assert_allclose(predict(theta, X2), 1.0, atol=1e-14)
    theta = PairCoefficients({(0, 1): 0.7, (1, 2): -1.3}, 3, 0.4)
    Xs = X.copy()
    Xs[2] *= 7.0
    np.testing.assert_allclose(predict(theta, Xs), predict(theta, X), atol=1e-10)
    with pytest.raises(DomainError):
        predict(theta, X[:, :2])
    d = Dataset(X, np.zeros(4), ("a", "b", "c"))
    np.testing.assert_allclose(predict(theta, d), predict(theta, X))


def test_json_round_trip():
    theta = PairCoefficients({(0, 2): 1.25, (1, 2): -0.5}, 3, 0.1, "binomial", ("u", "v", "w"))
    text = model_to_json(theta, {"lambda": 2.0, "k": 2, "gamma": 1.0})
    d = model_to_dict(theta)
    assert d["pairs"][0] == {"j": 0, "k": 2, "name_j": "u", "name_k": "w", "theta": 1.25}
    back = model_from_json(text)
    assert back.pairs == theta.pairs and back.family == "binomial"
    assert back.feature_names == theta.feature_names and back.intercept == 0.1
    table = ratio_table(theta)
    assert "log(X_u / X_w) -> 1.25" in table


def test_contrast_record_sum_residual():
    c = ContrastCoefficients(np.array([1.0, -0.5]))
    assert c.sum_residual == 0.5
