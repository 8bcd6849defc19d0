"""
Synthetic experiments: data generators, a paired-seed method comparison,
p-value calibration studies and a runtime benchmark.

Every replication draws its train set, test set and fold plan from a seed
derived from ``(master seed, amplitude index, replication)``, and every
method within a replication sees the same data.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .cv import (PathSpec, cv_constrained_lasso, cv_ridge, cv_stepwise, cv_two_stage,
                 default_lambda_grid, make_folds, ridge_path)
from .data import Dataset, design_from_logs, expand_ratios, log_design
from .exceptions import DomainError, LogRatioError
from .inference import (default_selective_lambda, f_test_sum_zero, lasso_selection_event,
                        selective_sum_zero_test)
from .logratio import (ContrastCoefficients, PairCoefficients, fit_lasso, fit_single_stage,
                       fit_two_stage, logs_predictor, pairs_to_contrast)
from .solver import constrained_lasso, gamma_max, prox_grad_lasso
from .stepwise import approx_forward_stepwise, exact_forward_stepwise

METHODS = ("approx_fs", "fs", "ridge", "single_stage", "two_stage",
           "two_stage_conservative", "vanilla_lasso")
MODELS = ("two_ratio", "misspecified", "pvalue_null_ratio", "pvalue_null_single")
RATIO_METHODS = ("approx_fs", "single_stage", "two_stage", "two_stage_conservative")
N_FIXED_POINTS = 50


def _names(p):
    return tuple(f"x{j}" for j in range(p))


def _abs_gaussian(rng, n, p):
    X = np.abs(rng.standard_normal((n, p)))
    # |N(0,1)| is positive almost surely; guard the measure-zero case anyway
    return np.maximum(X, np.finfo(float).tiny)


def experiment1_truth(p: int, s: float) -> PairCoefficients:
    return PairCoefficients({(0, 1): 2 * s, (2, 3): s}, p, 0.0, "gaussian", _names(p))


def experiment2_truth(p: int, s: float) -> ContrastCoefficients:
    beta = np.zeros(p)
    beta[:5] = [2 * s, -2 * s, s, -s, 0.3]
    return ContrastCoefficients(beta=beta, intercept=0.0)


def _truth_beta(model: str, p: int, s: float) -> np.ndarray:
    if model == "two_ratio":
        return pairs_to_contrast(experiment1_truth(p, s)).beta
    if model == "misspecified":
        return experiment2_truth(p, s).beta
    raise DomainError(f"model {model!r} has no regression truth")


def gen_experiment1(n: int = 100, p: int = 30, s: float = 1.0, seed=0):
    """
    ``y = 2s log(x1/x2) + s log(x3/x4) + eps`` with ``X`` iid ``|N(0,1)|``.

    Returns ``(Dataset, truth)``; features are 0-based, so the ratios are
    ``(0, 1)`` and ``(2, 3)``.
    """
    if p < 4:
        raise DomainError("experiment 1 needs p >= 4")
    rng = np.random.default_rng(seed)
    X = _abs_gaussian(rng, n, p)
    L = np.log(X)
    y = 2 * s * (L[:, 0] - L[:, 1]) + s * (L[:, 2] - L[:, 3]) + rng.standard_normal(n)
    return Dataset(X, y, _names(p)), experiment1_truth(p, s)


def gen_experiment2(n: int = 100, p: int = 30, s: float = 1.0, seed=0):
    """Experiment 1 plus an unpaired ``0.3 log(x5)`` term, so ``sum(beta) = 0.3``."""
    if p < 5:
        raise DomainError("experiment 2 needs p >= 5")
    rng = np.random.default_rng(seed)
    X = _abs_gaussian(rng, n, p)
    truth = experiment2_truth(p, s)
    y = np.log(X) @ truth.beta + rng.standard_normal(n)
    return Dataset(X, y, _names(p)), truth


def gen_pvalue_example(n: int = 100, p: int = 30, which: str = "null_ratio", seed=0) -> Dataset:
    """
    Calibration example: ``W = log|N(0,1)|`` used directly as the design and
    ``y = W beta + N(0, I)`` with ``beta = (2, -2, 0, ...)`` (``null_ratio``)
    or ``(2, 0, ...)`` (``null_single``).
    """
    beta = pvalue_beta(p, which)
    rng = np.random.default_rng(seed)
    X = _abs_gaussian(rng, n, p)
    y = np.log(X) @ beta + rng.standard_normal(n)
    return Dataset(X, y, _names(p))


def pvalue_beta(p: int, which: str) -> np.ndarray:
    beta = np.zeros(p)
    beta[0] = 2.0
    if which == "null_ratio":
        beta[1] = -2.0
    elif which != "null_single":
        raise DomainError(f"unknown p-value example {which!r}")
    return beta


# ---------------------------------------------------------------------------
# method comparison


@dataclass
class SimSpec:
    n: int = 100
    p: int = 30
    s: Sequence[float] = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    model: str = "two_ratio"
    reps: int = 200
    seed: int = 0
    methods: Sequence[str] = METHODS
    folds: int = 10
    k_grid: Sequence[int] = tuple(range(11))
    n_lambda: int = 20
    n_jobs: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise DomainError("reps must be at least 1")
        self.s = tuple(float(v) for v in np.atleast_1d(self.s))
        if any(v < 0 for v in self.s):
            raise DomainError("amplitudes must be nonnegative")
        if self.model not in ("two_ratio", "misspecified"):
            raise DomainError(f"run_experiment supports two_ratio and misspecified, not {self.model!r}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise DomainError(f"unknown methods {sorted(bad)}")


@dataclass
class MethodSummary:
    test_mse: float
    test_mse_noisy: float
    coef_mse: float
    bias2: float
    variance: float
    large_signal_recovery: float
    small_signal_recovery: float
    nulls_selected: float
    null_pairs_selected: float
    runtime_median: float
    n_ok: int
    n_failed: int


@dataclass
class SimResult:
    """
    Per-replication records and their ``(method, s)`` summaries.

    ``records`` holds one dict per successful (method, s, rep);
    ``failures`` one ``(method, s, rep, message)`` per failed fit.
    """

    spec: SimSpec
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def values(self, method: str, s: float, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in self.records if r["method"] == method and r["s"] == s])

    def paired(self, metric: str, a: str, b: str, s: float):
        """Metric values of methods ``a`` and ``b`` on replications where both succeeded."""
        va = {r["rep"]: r[metric] for r in self.records if r["method"] == a and r["s"] == s}
        vb = {r["rep"]: r[metric] for r in self.records if r["method"] == b and r["s"] == s}
        reps = sorted(set(va) & set(vb))
        return np.array([va[r] for r in reps]), np.array([vb[r] for r in reps])

    def mse_ratio(self, a: str, b: str, s: float, metric: str = "test_mse") -> float:
        xa, xb = self.paired(metric, a, b, s)
        return float(xa.mean() / xb.mean())

    def to_tsv(self, timings: bool = False) -> str:
        """Tidy table, one row per method, amplitude and metric.

        Wall times are left out unless ``timings`` is set, so the table is
        reproducible byte for byte.
        """
        lines = ["method\ts\tmetric\tvalue"]
        for (m, s), summ in sorted(self.summary.items()):
            for k, v in summ.__dict__.items():
                if k == "runtime_median" and not timings:
                    continue
                lines.append(f"{m}\t{s:g}\t{k}\t{v:.10g}")
        return "\n".join(lines) + "\n"


def _rep_seed(master: int, s_index: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(s_index), int(rep)])


def _draw(model, n, p, s, rng):
    X = _abs_gaussian(rng, n, p)
    beta = _truth_beta(model, p, s)
    mean = np.log(X) @ beta
    return X, mean, mean + rng.standard_normal(n)


@dataclass
class _Fitted:
    predict: object          # callable: raw log matrix -> predictions
    beta: np.ndarray         # contrast-space coefficients on raw logs
    features: set
    pairs: Optional[set]


def _from_theta(theta: PairCoefficients) -> _Fitted:
    beta = pairs_to_contrast(theta).beta
    return _Fitted(lambda L: logs_predictor(theta, L), beta, theta.support, set(theta.pairs))


def _from_linear(mu: float, beta: np.ndarray) -> _Fitted:
    beta = np.asarray(beta, dtype=float)
    return _Fitted(lambda L: mu + L @ beta, beta, set(np.flatnonzero(beta).tolist()), None)


def fit_method(method: str, L: np.ndarray, y: np.ndarray, folds, spec: SimSpec) -> _Fitted:
    """Tune ``method`` by cross-validation on ``(L, y)`` and refit on all rows."""
    W = design_from_logs(L, feature_names=_names(L.shape[1]))
    ks = spec.k_grid
    if method == "vanilla_lasso":
        curve = cv_constrained_lasso(L, y, folds, PathSpec(n_lambda=50), sum_zero=False)
        beta, mu, _ = fit_lasso(W, y, curve.best)
        return _from_linear(mu, beta)
    if method == "single_stage":
        curve = cv_constrained_lasso(L, y, folds, PathSpec(n_lambda=50))
        theta, _, _ = fit_single_stage(W, y, 2.0 * curve.best)
        return _from_theta(theta)
    if method in ("two_stage", "two_stage_conservative"):
        cons = method == "two_stage_conservative"
        grid = default_lambda_grid(L, y, n_lambda=spec.n_lambda)
        curve = cv_two_stage(L, y, folds, grid, ks, conservative=cons)
        lam, k = curve.best
        theta, _ = fit_two_stage(W, y, lam, k, conservative=cons)
        return _from_theta(theta)
    if method == "approx_fs":
        curve = cv_stepwise(L, y, folds, ks)
        tr = approx_forward_stepwise(L, y, curve.best)
        mu, coefs = tr.model(curve.best)
        return _from_theta(PairCoefficients(coefs, L.shape[1], mu))
    if method == "fs":
        curve = cv_stepwise(L, y, folds, ks, approximate=False)
        tr = exact_forward_stepwise(L, y, curve.best)
        mu, coefs = tr.model(curve.best)
        beta = np.zeros(L.shape[1])
        for j, c in coefs.items():
            beta[j] = c
        return _from_linear(mu, beta)
    if method == "ridge":
        curve = cv_ridge(L, y, folds)
        mu, beta = ridge_path(L, y, [curve.best])[0]
        return _from_linear(mu, beta)
    raise DomainError(f"unknown method {method!r}")


def _truth_sets(model: str, p: int, s: float):
    if s == 0:
        feats = set() if model == "two_ratio" else {4}
        return feats, set()
    feats = {0, 1, 2, 3} | ({4} if model == "misspecified" else set())
    return feats, {(0, 1), (2, 3)}


def _support_metrics(fit: _Fitted, method: str, model: str, p: int, s: float):
    feats, pairs = _truth_sets(model, p, s)
    if fit.pairs is not None:
        large = (0, 1) in fit.pairs
        small = (2, 3) in fit.pairs
        n_null_pairs = math.comb(p, 2) - len(pairs)
        null_pairs = len(fit.pairs - pairs) / n_null_pairs
    else:
        large = {0, 1} <= fit.features
        small = {2, 3} <= fit.features
        null_pairs = float("nan")
    nulls = len(fit.features - feats) / (p - len(feats))
    return float(large), float(small), nulls, null_pairs


def _one_replication(spec: SimSpec, s_index: int, rep: int, fixed_L: np.ndarray):
    s = spec.s[s_index]
    rng = np.random.default_rng(_rep_seed(spec.seed, s_index, rep))
    n, p = spec.n, spec.p
    Xtr, _, ytr = _draw(spec.model, n, p, s, rng)
    Xte, mte, yte = _draw(spec.model, n, p, s, rng)
    fold_seed = int(rng.integers(2**31))
    folds = make_folds(n, spec.folds, fold_seed)
    Ltr, Lte = np.log(Xtr), np.log(Xte)
    beta_true = _truth_beta(spec.model, p, s)
    records, failures = [], []
    for method in spec.methods:
        t0 = time.perf_counter()
        try:
            fit = fit_method(method, Ltr, ytr, folds, spec)
        except (LogRatioError, np.linalg.LinAlgError, ValueError) as exc:
            failures.append((method, s, rep, f"{type(exc).__name__}: {exc}"))
            continue
        elapsed = time.perf_counter() - t0
        pred = fit.predict(Lte)
        large, small, nulls, null_pairs = _support_metrics(fit, method, spec.model, p, s)
        records.append(dict(
            method=method, s=s, rep=rep,
            test_mse=float(np.mean((pred - mte) ** 2)),
            test_mse_noisy=float(np.mean((pred - yte) ** 2)),
            coef_mse=float(np.sum((fit.beta - beta_true) ** 2)),
            large_signal_recovery=large, small_signal_recovery=small,
            nulls_selected=nulls, null_pairs_selected=null_pairs,
            runtime=elapsed,
            fixed_pred=fit.predict(fixed_L),
        ))
    return records, failures


def _summarize(records, fixed_mean):
    preds = np.array([r["fixed_pred"] for r in records])
    avg = preds.mean(axis=0)
    bias2 = float(np.mean((avg - fixed_mean) ** 2))
    var = float(np.mean(preds.var(axis=0, ddof=1))) if len(records) > 1 else 0.0

    def m(key):
        v = np.array([r[key] for r in records], dtype=float)
        return float(np.nanmean(v)) if np.any(np.isfinite(v)) else float("nan")

    return dict(test_mse=m("test_mse"), test_mse_noisy=m("test_mse_noisy"),
                coef_mse=m("coef_mse"), bias2=bias2, variance=var,
                large_signal_recovery=m("large_signal_recovery"),
                small_signal_recovery=m("small_signal_recovery"),
                nulls_selected=m("nulls_selected"),
                null_pairs_selected=m("null_pairs_selected"),
                runtime_median=float(np.median([r["runtime"] for r in records])))


def run_experiment(spec: SimSpec, progress=None) -> SimResult:
    """
    Compare ``spec.methods`` over ``spec.reps`` paired replications per amplitude.

    Test MSE is measured against the true regression function on a fresh
    test set of size ``n`` (``test_mse_noisy`` uses the noisy responses).
    Bias and variance are pointwise over 50 fixed inputs shared by all
    replications.  Failed fits are listed in ``failures`` and excluded.
    """
    from joblib import Parallel, delayed

    result = SimResult(spec)
    fixed_rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 2**20]))
    fixed_L = np.log(_abs_gaussian(fixed_rng, N_FIXED_POINTS, spec.p))
    for si, s in enumerate(spec.s):
        if spec.n_jobs == 1:
            outs = []
            for rep in range(spec.reps):
                outs.append(_one_replication(spec, si, rep, fixed_L))
                if progress:
                    progress(s, rep)
        else:
            outs = Parallel(n_jobs=spec.n_jobs)(
                delayed(_one_replication)(spec, si, rep, fixed_L) for rep in range(spec.reps))
        fixed_mean = fixed_L @ _truth_beta(spec.model, spec.p, s)
        for recs, fails in outs:
            result.records.extend(recs)
            result.failures.extend(fails)
        for method in spec.methods:
            recs = [r for r in result.records if r["method"] == method and r["s"] == s]
            nfail = sum(1 for f in result.failures if f[0] == method and f[1] == s)
            if recs:
                result.summary[(method, s)] = MethodSummary(**_summarize(recs, fixed_mean),
                                                            n_ok=len(recs), n_failed=nfail)
    for r in result.records:
        r.pop("fixed_pred", None)
    return result


# ---------------------------------------------------------------------------
# calibration studies


@dataclass
class PvalueStudy:
    which: str
    p_values: np.ndarray
    pivots: np.ndarray
    skipped: int
    failures: list
    ks_statistic: float
    ks_pvalue: float

    @property
    def mean(self) -> float:
        return float(self.p_values.mean())


def _ks(pv):
    res = stats.kstest(pv, "uniform")
    return float(res.statistic), float(res.pvalue)


def run_pvalue_study(which: str = "null_ratio", reps: int = 2000, n: int = 100, p: int = 30,
                     seed: int = 0, sigma: float = 1.0, lam: Optional[float] = None,
                     max_draws: Optional[int] = None) -> PvalueStudy:
    """
    Selective p-values over ``reps`` replications that select the signal.

    Replications are kept when the lasso support contains the nonzero
    true features (``{0, 1}`` or ``{0}``); ``sigma`` is treated as known.
    The penalty defaults to ``2 sigma`` times the median column norm.
    """
    need = set(np.flatnonzero(pvalue_beta(p, which)).tolist())
    pv, piv, failures = [], [], []
    skipped = 0
    draws = 0
    limit = max_draws if max_draws is not None else 20 * reps
    while len(pv) < reps and draws < limit:
        d = gen_pvalue_example(n, p, which, np.random.SeedSequence([int(seed), draws]))
        draws += 1
        W = np.log(d.X)
        try:
            ev = lasso_selection_event(W, d.y, lam if lam is not None else default_selective_lambda(W, sigma))
            if not need <= set(ev.M.tolist()):
                skipped += 1
                continue
            r = selective_sum_zero_test(ev, W, d.y, sigma)
        except LogRatioError as exc:
            failures.append(f"{type(exc).__name__}: {exc}")
            continue
        pv.append(r.p_one_sided)
        piv.append(r.pivot)
    pv = np.array(pv)
    ks, ksp = _ks(pv) if pv.size else (float("nan"), float("nan"))
    return PvalueStudy(which, pv, np.array(piv), skipped, failures, ks, ksp)


def run_ftest_study(reps: int = 2000, n: int = 100, p: int = 10, beta=None, seed: int = 0,
                    sigma: float = 1.0):
    """F-test p-values for ``y = W beta + sigma * eps`` with ``W = log|N(0,1)|``."""
    if beta is None:
        beta = np.zeros(p)
        beta[:2] = [1.0, -1.0]
    beta = np.asarray(beta, dtype=float)
    out = np.empty(reps)
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        W = np.log(_abs_gaussian(rng, n, p))
        y = W @ beta + sigma * rng.standard_normal(n)
        out[r] = f_test_sum_zero(W, y)[1]
    return out


# ---------------------------------------------------------------------------
# runtime benchmark

BENCH_METHODS = ("approx_fs", "exact_fs_expanded", "constrained_lasso", "prox_grad_expanded")


def _median_time(fn, reps):
    fn()                      # untimed warm-up: JIT compilation and caches
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def run_runtime_bench(p_grid: Sequence[int], n: int = 500, k: int = 10, reps: int = 3,
                      seed: int = 0, memory_cap: float = 256e6, gamma_ratio: float = 0.1,
                      methods: Sequence[str] = BENCH_METHODS):
    """
    Median wall time of selection and lasso fitting against their
    expanded-design counterparts.

    Returns rows ``(method, p, median_seconds)``; cells whose expanded
    ratio matrix would exceed ``memory_cap`` bytes report ``"infeasible"``.
    """
    p_grid = [int(p) for p in p_grid]
    if p_grid != sorted(p_grid):
        raise DomainError("p_grid must be sorted ascending")
    rows = []
    for p in p_grid:
        d, _ = gen_experiment1(n, p, 1.0, np.random.SeedSequence([int(seed), p]))
        W = log_design(d)
        L = W.raw()
        y = d.y
        gamma = gamma_ratio * gamma_max(W, y)
        feasible = n * math.comb(p, 2) * 8 <= memory_cap
        for m in methods:
            if m == "approx_fs":
                t = _median_time(lambda: approx_forward_stepwise(L, y, k), reps)
            elif m == "constrained_lasso":
                t = _median_time(lambda: constrained_lasso(W, y, gamma), reps)
            elif not feasible:
                t = "infeasible"
            elif m == "exact_fs_expanded":
                t = _median_time(lambda: _expanded_fs(L, y, k), reps)
            elif m == "prox_grad_expanded":
                t = _median_time(lambda: prox_grad_lasso(expand_ratios(L)[0], y, 2 * gamma, tol=1e-9), reps)
            else:
                raise DomainError(f"unknown benchmark method {m!r}")
            rows.append((m, p, t))
    return rows


def _expanded_fs(L, y, k):
    Z, pairs = expand_ratios(L)
    return exact_forward_stepwise(Z, y, k, pair_index=pairs)
