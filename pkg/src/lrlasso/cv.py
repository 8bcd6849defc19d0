"""
K-fold and group-blocked cross-validation.

Every fold refits from scratch on its training rows, centering included,
so nothing computed from held-out rows reaches the fitted model.  Paths
are warm started across the penalty grid within a fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset, LogDesign, design_from_logs
from .exceptions import DomainError, LogRatioError
from .logratio import PairCoefficients, fit_single_stage, logs_predictor, two_stage_path
from .solver import gamma_max, geometric_grid, lambda_path
from .stepwise import approx_forward_stepwise, exact_forward_stepwise

DEFAULT_K = 10
RULES = ("min", "one_se")


@dataclass(frozen=True)
class FoldPlan:
    """Fold labels ``1..K`` per row; ``blocked_by`` names the grouping if any."""

    assignments: np.ndarray
    K: int
    blocked_by: Optional[str] = None
    seed: int = 0

    def test_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == f)

    def train_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != f)

    def __iter__(self):
        for f in range(1, self.K + 1):
            yield self.train_rows(f), self.test_rows(f)


def make_folds(d, K: Optional[int] = None, seed: int = 0, *, blocked: bool = False,
               groups=None, blocked_by: Optional[str] = None) -> FoldPlan:
    """
    Random balanced fold assignment.

    Parameters
    ----------
    d : Dataset or int
        The data (or just its row count).
    K : int, optional
        Number of folds.  Defaults to 10, or to the number of groups capped
        at 10 when blocked.
    seed : int
    blocked : bool
        Keep all rows sharing a group id in one fold.  Groups are shuffled
        and then assigned greedily to the currently smallest fold.
    groups : array, optional
        Group labels; defaults to ``d.group_ids``.
    """
    if isinstance(d, Dataset):
        n = d.n
        if groups is None:
            groups = d.group_ids
    else:
        n = int(d)
    rng = np.random.default_rng(seed)
    if blocked:
        if groups is None:
            raise DomainError("blocked folds need group ids")
        groups = np.asarray(groups)
        labels, inverse = np.unique(groups, return_inverse=True)
        G = labels.size
        K = min(G, DEFAULT_K) if K is None else int(K)
        if K < 2:
            raise DomainError("need at least two folds")
        if G < K:
            raise DomainError(f"{G} groups cannot fill {K} folds")
        sizes = np.bincount(inverse, minlength=G)
        fold_of_group = np.empty(G, dtype=int)
        load = np.zeros(K, dtype=int)
        for g in rng.permutation(G):
            f = int(np.argmin(load))
            fold_of_group[g] = f + 1
            load[f] += sizes[g]
        assign = fold_of_group[inverse]
        return FoldPlan(assign, K, blocked_by or "group", seed)
    K = DEFAULT_K if K is None else int(K)
    if K < 2:
        raise DomainError("need at least two folds")
    if K > n:
        raise DomainError(f"cannot split {n} rows into {K} folds")
    assign = np.empty(n, dtype=int)
    assign[rng.permutation(n)] = np.arange(n) % K + 1
    return FoldPlan(assign, K, None, seed)


@dataclass
class CvCurve:
    """
    Cross-validated error over a tuning grid.

    ``complexity`` orders grid points from sparsest to densest and drives the
    one-standard-error rule.  ``fold_errors[f, g]`` is the mean held-out loss
    of fold ``f`` at grid point ``g`` (``inf`` where the fit failed).
    """

    grid: list
    mean_error: np.ndarray
    se_error: np.ndarray
    chosen: int
    rule: str
    complexity: list = field(default_factory=list)
    fold_errors: Optional[np.ndarray] = None
    misclassification: Optional[np.ndarray] = None
    failures: int = 0

    def choose(self, rule: str = "min") -> int:
        if rule not in RULES:
            raise DomainError(f"unknown rule {rule!r}")
        best = int(np.argmin(self.mean_error))
        if rule == "min" or not np.isfinite(self.mean_error[best]):
            return best
        cut = self.mean_error[best] + self.se_error[best]
        ok = [g for g in range(len(self.grid)) if self.mean_error[g] <= cut]
        return min(ok, key=lambda g: (self.complexity[g], g))

    @property
    def best(self):
        return self.grid[self.chosen]


def _losses(eta: np.ndarray, y: np.ndarray, family: str):
    """Per-grid-point mean loss (and misclassification) of predictions ``eta[g, i]``."""
    if family == "binomial":
        pr = np.clip(expit(eta), 1e-15, 1 - 1e-15)
        dev = -2.0 * (y * np.log(pr) + (1 - y) * np.log1p(-pr))
        err = dev.mean(axis=1)
        mis = ((pr > 0.5) != (y > 0.5)).mean(axis=1)
    else:
        err = ((eta - y) ** 2).mean(axis=1)
        mis = None
    bad = ~np.all(np.isfinite(eta), axis=1)
    err[bad] = np.inf
    if mis is not None:
        mis = mis.astype(float)
        mis[bad] = np.inf
    return err, mis


def _log_matrix(W) -> np.ndarray:
    return W.raw() if isinstance(W, LogDesign) else np.asarray(W, dtype=float)


def cross_validate(W, y, folds: FoldPlan, fold_fit: Callable, grid: Sequence,
                   family: str = "gaussian", complexity: Optional[Sequence] = None,
                   rule: str = "min") -> CvCurve:
    """
    Generic driver.

    ``fold_fit(L_train, y_train, L_test)`` returns an array of linear
    predictors of shape ``(len(grid), n_test)``; non-finite rows mark
    failed grid points.
    """
    L = _log_matrix(W)
    y = np.asarray(y, dtype=float)
    G = len(grid)
    errs = np.empty((folds.K, G))
    mis = np.empty((folds.K, G)) if family == "binomial" else None
    for f, (tr, te) in enumerate(folds):
        if family == "binomial" and np.unique(y[tr]).size < 2:
            raise DomainError(f"fold {f + 1}: training response is constant")
        eta = np.asarray(fold_fit(L[tr], y[tr], L[te]), dtype=float)
        errs[f], m = _losses(eta, y[te], family)
        if mis is not None:
            mis[f] = m
    finite = np.isfinite(errs)
    mean = np.where(finite.all(axis=0), errs.mean(axis=0), np.inf)
    with np.errstate(invalid="ignore"):
        se = np.where(finite.all(axis=0), errs.std(axis=0, ddof=1) / np.sqrt(folds.K), np.inf)
    curve = CvCurve(grid=list(grid), mean_error=mean, se_error=se, chosen=0, rule=rule,
                    complexity=list(range(G)) if complexity is None else list(complexity),
                    fold_errors=errs,
                    misclassification=None if mis is None else mis.mean(axis=0),
                    failures=int((~finite).sum()))
    curve.chosen = curve.choose(rule)
    return curve


@dataclass
class PathSpec:
    """Decreasing penalty grid: explicit ``grid`` or a geometric one from the full data."""

    n_lambda: int = 50
    lambda_min_ratio: float = 1e-3
    grid: Optional[Sequence[float]] = None

    def resolve(self, L, y, family, sum_zero=True) -> np.ndarray:
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.size == 0 or np.any(g < 0):
                raise DomainError("penalty grid must be nonempty and nonnegative")
            return g
        Wfull = design_from_logs(L)
        if sum_zero:
            top = gamma_max(Wfull, y, family)
        else:
            from .solver import LassoProblem, lambda_max
            top = lambda_max(LassoProblem(Wfull.W, y, 0.0, family=family))
        return geometric_grid(top, self.n_lambda, self.lambda_min_ratio)


def cv_constrained_lasso(W, y, folds: FoldPlan, path_spec: Optional[PathSpec] = None,
                         family: str = "gaussian", *, sum_zero: bool = True,
                         rule: str = "min") -> CvCurve:
    """
    Cross-validate the sum-zero lasso over a shared ``gamma`` grid.

    With ``sum_zero=False`` the same machinery tunes the plain lasso on log
    features.  Error is mean squared error (gaussian) or mean deviance
    (binomial) on held-out rows.
    """
    L = _log_matrix(W)
    y = np.asarray(y, dtype=float)
    grid = (path_spec or PathSpec()).resolve(L, y, family, sum_zero)

    def fold_fit(Ltr, ytr, Lte):
        Wtr = design_from_logs(Ltr)
        Xte = Wtr.transform(Lte)
        out = np.full((grid.size, Lte.shape[0]), np.nan)
        try:
            path = lambda_path(Wtr, ytr, family, grid=grid, sum_zero=sum_zero)
        except LogRatioError:
            return out
        for g, (_, sol) in enumerate(path):
            out[g] = sol.intercept + Xte @ sol.coefficients
        return out

    return cross_validate(L, y, folds, fold_fit, [float(g) for g in grid], family, rule=rule)


def default_lambda_grid(W, y, family: str = "gaussian", n_lambda: int = 20,
                        lambda_min_ratio: float = 0.01) -> np.ndarray:
    """Log-ratio penalties ``lambda = 2 gamma`` on a geometric grid from the full data."""
    L = _log_matrix(W)
    return 2.0 * geometric_grid(gamma_max(design_from_logs(L), y, family), n_lambda,
                                lambda_min_ratio)


def cv_two_stage(W, y, folds: FoldPlan, lambda_grid, k_grid, family: str = "gaussian",
                 conservative: bool = False, *, rule: str = "min") -> CvCurve:
    """
    Joint cross-validation of the two-stage procedure over ``(lambda, k)``.

    Within a fold the stage-1 fits are warm started along the decreasing
    ``lambda_grid``; one stage-2 trace is computed per ``lambda`` up to
    ``max(k_grid)`` and truncated for each ``k``.  Grid points whose fit
    raises get infinite error.
    """
    lam = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]
    ks = sorted(set(int(k) for k in k_grid))
    if lam.size == 0 or not ks:
        raise DomainError("lambda and k grids must be nonempty")
    if ks[0] < 0 or np.any(lam < 0):
        raise DomainError("grids must be nonnegative")
    grid = [(float(a), k) for a in lam for k in ks]
    complexity = [(k, i) for i in range(lam.size) for k in ks]

    def fold_fit(Ltr, ytr, Lte):
        Wtr = design_from_logs(Ltr)
        out = np.full((len(grid), Lte.shape[0]), np.nan)
        init = None
        for i, a in enumerate(lam):
            try:
                st1 = fit_single_stage(Wtr, ytr, a, family, init=init)
                init = st1[2].stage1
                models, _ = two_stage_path(Wtr, ytr, a, ks, family, conservative, stage1=st1)
            except LogRatioError:
                continue
            for b, k in enumerate(ks):
                out[i * len(ks) + b] = logs_predictor(models[k], Lte)
        return out

    return cross_validate(W, y, folds, fold_fit, grid, family, complexity, rule)


def cv_stepwise(W, y, folds: FoldPlan, k_grid, *, approximate: bool = True,
                rule: str = "min") -> CvCurve:
    """
    Cross-validate the number of forward-stepwise steps.

    ``approximate=True`` runs approximate log-ratio stepwise selection;
    otherwise exact forward stepwise on the individual log features.
    """
    ks = sorted(set(int(k) for k in k_grid))
    if not ks or ks[0] < 0:
        raise DomainError("k grid must be nonempty and nonnegative")

    def fold_fit(Ltr, ytr, Lte):
        out = np.full((len(ks), Lte.shape[0]), np.nan)
        try:
            tr = approx_forward_stepwise(Ltr, ytr, ks[-1]) if approximate \
                else exact_forward_stepwise(Ltr, ytr, ks[-1])
        except LogRatioError:
            return out
        for b, k in enumerate(ks):
            out[b] = stepwise_predict(tr, k, Lte, approximate)
        return out

    return cross_validate(W, y, folds, fold_fit, ks, "gaussian", rule=rule)


def stepwise_predict(trace, k: int, L, approximate: bool) -> np.ndarray:
    mu, coefs = trace.model(k)
    if approximate:
        return logs_predictor(PairCoefficients(coefs, L.shape[1], mu), L)
    eta = np.full(L.shape[0], mu)
    for j, c in coefs.items():
        eta += c * L[:, j]
    return eta


def ridge_path(Ltr, ytr, alphas):
    """Ridge coefficients on centered log features for each penalty in ``alphas``."""
    means = Ltr.mean(axis=0)
    X = Ltr - means
    U, d, Vt = np.linalg.svd(X, full_matrices=False)
    uy = U.T @ (ytr - ytr.mean())
    out = []
    for a in alphas:
        beta = Vt.T @ (d / (d * d + a) * uy)
        out.append((float(ytr.mean() - means @ beta), beta))
    return out


def default_ridge_grid(L, n_alpha: int = 30) -> np.ndarray:
    X = L - L.mean(axis=0)
    scale = float(np.sum(X * X)) / X.shape[1]
    return scale * np.geomspace(1e2, 1e-4, n_alpha)


def cv_ridge(W, y, folds: FoldPlan, alphas=None, *, rule: str = "min") -> CvCurve:
    L = _log_matrix(W)
    alphas = default_ridge_grid(L) if alphas is None else np.asarray(alphas, dtype=float)

    def fold_fit(Ltr, ytr, Lte):
        return np.array([mu + Lte @ beta for mu, beta in ridge_path(Ltr, ytr, alphas)])

    return cross_validate(L, y, folds, fold_fit, [float(a) for a in alphas], "gaussian", rule=rule)
