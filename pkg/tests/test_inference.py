import mpmath as mp
import numpy as np
import pytest
from scipy import stats

from lrlasso.exceptions import (DomainError, InfeasibleTruncationError, NoTestError,
                                RankDeficientError, UnstableTruncationError)
from lrlasso.inference import (SelectionEvent, default_selective_lambda, event_matrices,
                               f_test_sum_zero, lasso_selection_event, selective_sum_zero_test,
                               truncated_gaussian_cdf, truncation_limits)
from lrlasso.simulate import gen_pvalue_example, run_pvalue_study
from lrlasso.solver import LassoProblem, solve_lasso

from conftest import abs_gaussian_logs


# ---------------------------------------------------------------------------
# F-test


def test_f_test_noiseless():
    rng = np.random.default_rng(0)
    W = abs_gaussian_logs(rng, 30, 4)
    assert f_test_sum_zero(W, 1.0 + W @ [1.0, -1.0, 2.0, -2.0]) == (0.0, 1.0)
    F, p = f_test_sum_zero(W, 1.0 + W @ [1.0, 0.0, 0.0, 0.0])
    assert F == np.inf and p == 0.0


def test_f_test_matches_rss_comparison(rng):
    for _ in range(5):
        n, p = 40, 5
        W = abs_gaussian_logs(rng, n, p)
        y = W @ rng.standard_normal(p) + rng.standard_normal(n)
        full = np.column_stack([np.ones(n), W])
        rss_u = np.sum((y - full @ np.linalg.lstsq(full, y, rcond=None)[0]) ** 2)
        # restricted model: beta_p = -sum of the others
        R = np.column_stack([np.ones(n), W[:, :-1] - W[:, [-1]]])
        rss_r = np.sum((y - R @ np.linalg.lstsq(R, y, rcond=None)[0]) ** 2)
        F_ref = (rss_r - rss_u) / (rss_u / (n - p - 1))
        F, pv = f_test_sum_zero(W, y)
        assert F == pytest.approx(F_ref, rel=1e-9)
        assert pv == pytest.approx(stats.f.sf(F_ref, 1, n - p - 1), rel=1e-9)


def test_f_test_rank_deficiency(rng):
    W = abs_gaussian_logs(rng, 6, 5)
    with pytest.raises(RankDeficientError):
        f_test_sum_zero(W, rng.standard_normal(6))
    W = abs_gaussian_logs(rng, 20, 3)
    W[:, 2] = W[:, 0] + W[:, 1]
    with pytest.raises(RankDeficientError):
        f_test_sum_zero(W, rng.standard_normal(20))


# ---------------------------------------------------------------------------
# truncated Gaussian CDF


def _mp_tcdf(x, mu, sd, lo, hi):
    """High precision reference built from erfc tails."""
    mp.mp.dps = 60
    a, b, z = [(mp.mpf(v) - mu) / sd for v in (lo, hi, x)]
    if a + b > 0:
        Q = lambda t: mp.erfc(t / mp.sqrt(2)) / 2
        return float((Q(a) - Q(z)) / (Q(a) - Q(b)))
    P = lambda t: mp.erfc(-t / mp.sqrt(2)) / 2
    return float((P(z) - P(a)) / (P(b) - P(a)))


def test_tcdf_examples():
    assert truncated_gaussian_cdf(0.0, 0.0, 1.0, -np.inf, np.inf) == pytest.approx(0.5)
    assert truncated_gaussian_cdf(1.0, 0.0, 1.0, -1.0, 1.0) == 1.0
    assert truncated_gaussian_cdf(-1.0, 0.0, 1.0, -1.0, 1.0) == 0.0
    assert truncated_gaussian_cdf(0.0, 0.0, 1.0, -1.0, 1.0) == pytest.approx(0.5)
    assert truncated_gaussian_cdf(1.96, 0.0, 1.0, -np.inf, np.inf) == pytest.approx(stats.norm.cdf(1.96))


@pytest.mark.parametrize("x,mu,sd,lo,hi", [
    (30.5, 0.0, 1.0, 30.0, 31.0),
    (-30.5, 0.0, 1.0, -31.0, -30.0),
    (12.0, 1.0, 2.0, 10.0, np.inf),
    (-8.0, 3.0, 1.5, -np.inf, -7.0),
    (0.3, 0.1, 0.5, -0.2, 2.0),
    (40.001, 0.0, 1.0, 40.0, 40.01),
    (5.0, -2.0, 0.7, 4.0, 9.0),
])
def test_tcdf_against_high_precision(x, mu, sd, lo, hi):
    assert truncated_gaussian_cdf(x, mu, sd, lo, hi) == pytest.approx(_mp_tcdf(x, mu, sd, lo, hi), rel=1e-8, abs=1e-14)


def test_tcdf_decreasing_in_mean():
    mus = np.linspace(-10, 10, 81)
    vals = [truncated_gaussian_cdf(0.4, m, 1.0, -0.5, 2.0) for m in mus]
    assert np.all(np.diff(vals) <= 1e-15)
    assert vals[0] > 0.99 and vals[-1] < 0.01


def test_tcdf_errors():
    with pytest.raises(DomainError):
        truncated_gaussian_cdf(0.0, 0.0, 0.0, -1.0, 1.0)
    with pytest.raises(DomainError):
        truncated_gaussian_cdf(0.0, 0.0, 1.0, 1.0, -1.0)
    with pytest.raises(DomainError):
        truncated_gaussian_cdf(2.0, 0.0, 1.0, -1.0, 1.0)
    with pytest.raises(UnstableTruncationError):
        truncated_gaussian_cdf(1.0, 0.0, 1.0, 1.0, 1.0)
    # log tails keep far intervals usable
    assert truncated_gaussian_cdf(1e5, 0.0, 1.0, 1e5, 1e5 + 1) == 0.0


# ---------------------------------------------------------------------------
# selection events


def _orthonormal_centered(rng, n, p):
    Q, _ = np.linalg.qr(np.column_stack([np.ones(n), rng.standard_normal((n, p))]))
    return Q[:, 1:]


def test_event_empty_support(rng):
    X = _orthonormal_centered(rng, 30, 3)
    y = 0.01 * rng.standard_normal(30)
    ev = lasso_selection_event(X, y, 1.0)
    assert ev.M.size == 0 and ev.blocks == (3, 3, 0)
    # the event is {|X'y| <= lam}
    np.testing.assert_allclose(ev.A[:3], X.T, atol=1e-12)
    np.testing.assert_allclose(ev.b, 1.0)
    with pytest.raises(NoTestError):
        selective_sum_zero_test(ev, X, y, 1.0)


def test_event_orthonormal_hand_reduction(rng):
    X = _orthonormal_centered(rng, 25, 2)
    lam = 0.7
    A, b, _ = event_matrices(X, [0], [1.0], lam)
    for _ in range(2000):
        y = rng.standard_normal(25) * 1.2
        u = X.T @ y
        hand = u[0] > lam and abs(u[1]) <= lam
        if min(abs(u[0] - lam), abs(abs(u[1]) - lam)) < 1e-9:
            continue
        assert bool(np.all(A @ y <= b)) == hand


def test_event_membership_matches_refits(rng):
    n, p, lam = 40, 6, 3.0
    X = abs_gaussian_logs(rng, n, p)
    Xc = X - X.mean(axis=0)
    y0 = Xc @ np.r_[2.0, -1.5, np.zeros(p - 2)] + rng.standard_normal(n)
    ev = lasso_selection_event(X, y0, lam)
    key0 = (tuple(ev.M), tuple(ev.s))
    mismatches = inside = 0
    for _ in range(10_000):
        y = y0 + 0.6 * rng.standard_normal(n)
        beta = solve_lasso(LassoProblem(Xc, y, lam)).coefficients
        M = np.flatnonzero(beta)
        same = (tuple(M), tuple(np.sign(beta[M]))) == key0
        inside += same
        mismatches += ev.contains(y, 0.0) != same
    assert 500 < inside < 9500
    assert mismatches == 0


# ---------------------------------------------------------------------------
# selective test


def test_untruncated_event_reduces_to_gaussian(rng):
    n = 30
    X = abs_gaussian_logs(rng, n, 4)
    y = rng.standard_normal(n)
    ev = SelectionEvent(M=np.array([0, 2]), s=np.array([1.0, -1.0]), A=np.empty((0, n)), b=np.empty(0), lam=1.0)
    r = selective_sum_zero_test(ev, X, y, sigma=1.3)
    assert r.vminus == -np.inf and r.vplus == np.inf
    expect = stats.norm.sf(r.statistic / (1.3 * np.linalg.norm(r.eta)))
    assert r.p_one_sided == pytest.approx(expect, rel=1e-10)
    assert r.pivot == pytest.approx(1 - expect, rel=1e-10)
    Xc = X - X.mean(axis=0)
    XM = Xc[:, [0, 2]]
    np.testing.assert_allclose(r.eta, XM @ np.linalg.solve(XM.T @ XM, np.ones(2)), atol=1e-12)


def test_truncation_limits_independent_of_statistic(rng):
    d = gen_pvalue_example(100, 30, "null_ratio", seed=5)
    W = np.log(d.X)
    ev = lasso_selection_event(W, d.y, default_selective_lambda(W))
    r = selective_sum_zero_test(ev, W, d.y, 1.0)
    assert r.vminus <= r.statistic <= r.vplus
    assert r.p_two_sided == pytest.approx(1 - 2 * abs(r.p_one_sided - 0.5))
    assert not r.sigma_estimated and r.sigma == 1.0
    c = r.eta / (r.eta @ r.eta)
    z = d.y - c * r.statistic
    # moving y along c leaves z, hence the limits, unchanged
    for t in np.linspace(r.vminus if np.isfinite(r.vminus) else r.statistic - 1,
                         r.vplus if np.isfinite(r.vplus) else r.statistic + 1, 5)[1:-1]:
        y2 = z + c * t
        assert truncation_limits(ev, y2 - c * (r.eta @ y2), c) == pytest.approx((r.vminus, r.vplus))
        assert ev.contains(y2)


def test_sigma_estimated_flag():
    d = gen_pvalue_example(100, 10, "null_single", seed=1)
    W = np.log(d.X)
    ev = lasso_selection_event(W, d.y, default_selective_lambda(W))
    r = selective_sum_zero_test(ev, W, d.y)
    assert r.sigma_estimated and 0.6 < r.sigma < 1.5


def test_infeasible_truncation_detected(rng):
    n = 20
    X = abs_gaussian_logs(rng, n, 3)
    y = rng.standard_normal(n)
    # an event y does not satisfy
    Xc = X - X.mean(axis=0)
    eta = Xc[:, [0]] @ np.linalg.solve(Xc[:, [0]].T @ Xc[:, [0]], [1.0])
    A = np.vstack([eta, -eta])
    b = np.array([eta @ y - 5.0, -(eta @ y) - 5.0])
    ev = SelectionEvent(M=np.array([0]), s=np.array([1.0]), A=A, b=b, lam=1.0)
    with pytest.raises(InfeasibleTruncationError):
        selective_sum_zero_test(ev, X, y, 1.0)


def test_selective_null_is_uniform():
    st = run_pvalue_study("null_ratio", reps=500, seed=3)
    assert st.p_values.size == 500 and not st.failures
    assert stats.kstest(st.p_values, "uniform").pvalue > 0.01


def test_selective_alternative_has_power():
    st = run_pvalue_study("null_single", reps=200, seed=3)
    assert st.mean < 0.45
