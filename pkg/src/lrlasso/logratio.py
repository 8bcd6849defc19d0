"""
Log-ratio models and their fitting procedures.

A log-ratio model predicts

    y_i = mu + sum_{j<k} theta_{jk} log(x_ij / x_ik)

and collapses to a log-linear model with contrast coefficients
``beta = b(theta)``, ``b(theta)_k = -sum_{j<k} theta_{jk} + sum_{j>k} theta_{kj}``,
which always sum to zero.  Penalized fits are computed in the
p-dimensional contrast space (:func:`lrlasso.solver.constrained_lasso`
with half the penalty) and mapped back to a canonical ``theta``.

All intercepts and coefficients in this module are on the raw log scale,
so :func:`predict` works directly on positive data.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from .data import ONE_NAME, Dataset, LogDesign, design_from_logs, expand_ratios
from .exceptions import DomainError, NotAContrastError
from .solver import LassoProblem, LassoSolution, constrained_lasso, solve_lasso
from .stepwise import StepwiseTrace, exact_forward_stepwise

SUM_TOL = 1e-8


@dataclass
class PairCoefficients:
    """
    Sparse log-ratio coefficients ``{(j, k): theta_jk}`` with ``j < k``.

    Zero entries are dropped on construction.
    """

    pairs: dict
    p: int
    intercept: float = 0.0
    family: str = "gaussian"
    feature_names: tuple = ()

    def __post_init__(self):
        raw = dict(self.pairs)
        keys = np.array(list(raw.keys()), dtype=int).reshape(-1, 2)
        vals = np.array(list(raw.values()), dtype=float)
        bad = ~((keys[:, 0] >= 0) & (keys[:, 0] < keys[:, 1]) & (keys[:, 1] < self.p))
        if bad.any():
            key = tuple(keys[np.argmax(bad)].tolist())
            raise DomainError(f"pair {key} is not an ordered pair of features in 0..{self.p - 1}")
        keep = np.flatnonzero(vals != 0.0)
        keep = keep[np.lexsort((keys[keep, 1], keys[keep, 0]))]
        self.pairs = dict(zip(map(tuple, keys[keep].tolist()), vals[keep].tolist()))
        self.feature_names = tuple(self.feature_names)

    @property
    def l1_norm(self) -> float:
        return float(sum(abs(v) for v in self.pairs.values()))

    @property
    def support(self) -> set:
        """Features appearing in at least one ratio."""
        return {i for key in self.pairs for i in key}

    def name(self, j: int) -> str:
        return self.feature_names[j] if self.feature_names else f"x{j}"


@dataclass
class ContrastCoefficients:
    beta: np.ndarray
    intercept: float = 0.0
    sum_residual: float = field(default=None)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.sum_residual is None:
            self.sum_residual = abs(float(self.beta.sum()))


@dataclass
class FitReport:
    method: str
    family: str
    lam: Optional[float] = None
    gamma: Optional[float] = None
    k: Optional[int] = None
    objective: Optional[float] = None
    kkt_residual: Optional[float] = None
    constraint_residual: Optional[float] = None
    converged: bool = True
    stage1_support: tuple = ()
    warnings: list = field(default_factory=list)
    stage1: Optional[LassoSolution] = None
    trace: Optional[StepwiseTrace] = None


# ---------------------------------------------------------------------------
# the theta <-> beta embedding


def pairs_to_contrast(t: PairCoefficients) -> ContrastCoefficients:
    beta = np.zeros(t.p)
    for (j, k), v in t.pairs.items():
        beta[j] += v
        beta[k] -= v
    return ContrastCoefficients(beta=beta, intercept=t.intercept)


def contrast_to_pairs(c, *, tol: Optional[float] = None, p: Optional[int] = None,
                      family: str = "gaussian", feature_names=()) -> PairCoefficients:
    """
    Canonical minimal-norm ratio representation of a sum-zero ``beta``.

    Every positive coefficient is paired with every negative one:
    ``theta = 2 |beta_i| |beta_j| / ||beta||_1``, oriented so the positive
    feature sits in the numerator.  The result satisfies ``b(theta) = beta``
    and ``2 ||theta||_1 = ||beta||_1``.

    Raises
    ------
    NotAContrastError
        If ``|sum(beta)|`` exceeds ``tol`` (default ``1e-8 (1 + ||beta||_1)``).
    """
    if isinstance(c, ContrastCoefficients):
        beta, mu = c.beta, c.intercept
    else:
        beta, mu = np.asarray(c, dtype=float), 0.0
    l1 = float(np.abs(beta).sum())
    if tol is None:
        tol = SUM_TOL * (1.0 + l1)
    total = float(beta.sum())
    if abs(total) > tol:
        raise NotAContrastError(f"coefficients sum to {total:g}, not zero")
    pairs = {}
    if l1 > 0:
        pos = np.flatnonzero(beta > 0)
        neg = np.flatnonzero(beta < 0)
        I, J = np.meshgrid(pos, neg, indexing="ij")
        v = 2.0 * np.outer(beta[pos], -beta[neg]) / l1
        v = np.where(I < J, v, -v)
        keys = zip(np.minimum(I, J).ravel().tolist(), np.maximum(I, J).ravel().tolist())
        pairs = dict(zip(keys, v.ravel().tolist()))
    return PairCoefficients(pairs=pairs, p=beta.size if p is None else p, intercept=mu,
                            family=family, feature_names=feature_names)


# ---------------------------------------------------------------------------
# fitting


def _unpaired_design(W: LogDesign) -> LogDesign:
    if ONE_NAME in W.feature_names:
        raise DomainError(f"design already contains {ONE_NAME!r}")
    L = np.column_stack([W.raw(), np.zeros(W.n)])
    names = tuple(W.feature_names) or tuple(f"x{j}" for j in range(W.p))
    return design_from_logs(L, center=W.centered, scale=False, feature_names=names + (ONE_NAME,))


def _raw_intercept(W: LogDesign, mu_centered: float, beta) -> float:
    if W.centered:
        return float(mu_centered - W.column_means @ beta)
    return float(mu_centered)


def fit_single_stage(W: LogDesign, y, lam: float, family: str = "gaussian",
                     include_unpaired: bool = False, init: Optional[LassoSolution] = None):
    """
    Log-ratio lasso at penalty ``lam`` via the sum-zero lasso at ``lam / 2``.

    With ``include_unpaired`` a constant feature ``_one`` is appended, so
    ratios against it act as plain log terms.

    Returns
    -------
    theta : PairCoefficients
    contrast : ContrastCoefficients
    report : FitReport
    """
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    if include_unpaired:
        W = _unpaired_design(W)
    sol = constrained_lasso(W, y, lam / 2.0, family=family, init=init)
    beta = sol.coefficients
    mu = _raw_intercept(W, sol.intercept, beta)
    contrast = ContrastCoefficients(beta=beta, intercept=mu, sum_residual=sol.constraint_residual)
    theta = contrast_to_pairs(contrast, family=family, feature_names=W.feature_names)
    report = FitReport(method="single", family=family, lam=lam, gamma=lam / 2.0,
                       objective=sol.objective, kkt_residual=sol.kkt_residual,
                       constraint_residual=sol.constraint_residual, converged=sol.converged,
                       stage1_support=tuple(int(j) for j in sol.support), stage1=sol)
    if not sol.converged:
        report.warnings.append("stage-1 solver did not converge")
    return theta, contrast, report


def logistic_refit(F, y, *, max_iter: int = 100, tol: float = 1e-10):
    """
    Unpenalized logistic regression of ``y`` on ``[1, F]`` by IRLS with
    step halving.  Returns ``(intercept, coefs, converged)``.
    """
    n = y.shape[0]
    A = np.column_stack([np.ones(n), F])
    ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    b = np.zeros(A.shape[1])
    b[0] = np.log(ybar / (1 - ybar))

    def nll(v):
        eta = A @ v
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta))

    f = nll(b)
    converged = False
    for _ in range(max_iter):
        eta = A @ b
        p = expit(eta)
        w = np.maximum(p * (1 - p), 1e-10)
        step = linalg.lstsq(A * np.sqrt(w)[:, None], (y - p) / np.sqrt(w), check_finite=False)[0]
        t = 1.0
        while True:
            b_new = b + t * step
            f_new = nll(b_new)
            if f_new <= f + 1e-12 * (1 + abs(f)) or t < 1e-8:
                break
            t *= 0.5
        done = abs(f - f_new) <= tol * (1 + abs(f_new))
        b, f = b_new, f_new
        if done:
            converged = True
            break
    return float(b[0]), b[1:], converged


def _ratio_matrix(L: np.ndarray, pairs) -> np.ndarray:
    if not pairs:
        return np.empty((L.shape[0], 0))
    return np.column_stack([L[:, j] - L[:, k] for j, k in pairs])


def _finish_two_stage(trace: StepwiseTrace, k: int, L, y, family, conservative):
    """Model with the first ``k`` ratios of ``trace``; refits for binomial."""
    mu, coefs = trace.model(k)
    if family == "binomial" and not conservative:
        pairs = list(coefs)
        mu, c, ok = logistic_refit(_ratio_matrix(L, pairs), y)
        coefs = dict(zip(pairs, c))
        return mu, coefs, ok
    return mu, coefs, True


def two_stage_path(W: LogDesign, y, lam: float, k_values, family: str = "gaussian",
                   conservative: bool = False, stage1=None):
    """
    Two-stage models for several step counts sharing one stage-2 trace.

    Returns ``(models, report)`` where ``models[k]`` is the
    :class:`PairCoefficients` after ``min(k, steps taken)`` ratios.
    """
    k_values = [int(k) for k in k_values]
    if not k_values or min(k_values) < 0:
        raise DomainError("step counts must be a nonempty set of nonnegative integers")
    k_max = max(k_values)
    y = np.asarray(y, dtype=float)
    if stage1 is None:
        stage1 = fit_single_stage(W, y, lam, family=family)
    theta1, contrast1, rep1 = stage1
    support = sorted(int(j) for j in np.flatnonzero(contrast1.beta))
    L = W.raw()
    names = W.feature_names
    report = FitReport(method="two-stage-conservative" if conservative else "two-stage",
                       family=family, lam=lam, gamma=lam / 2.0, k=k_max,
                       objective=rep1.objective, kkt_residual=rep1.kkt_residual,
                       constraint_residual=rep1.constraint_residual, converged=rep1.converged,
                       stage1_support=tuple(support), stage1=rep1.stage1)
    # the conservative variant regresses the stage-1 linear predictor
    target = contrast1.intercept + L @ contrast1.beta if conservative else y
    if len(support) < 2 or k_max == 0:
        if k_max > 0:
            report.warnings.append("stage-1 support too small to form ratios")
        mu = float(target.mean()) if family == "gaussian" or conservative else _logit_mean(y)
        report.k = 0
        return {k: PairCoefficients({}, W.p, mu, family, names) for k in k_values}, report
    Zt, pairs = expand_ratios(L, support=support)
    trace = exact_forward_stepwise(Zt, target, k_max, pair_index=pairs)
    report.trace = trace
    report.k = min(k_max, trace.n_steps)
    models = {}
    for k in k_values:
        mu, coefs, ok = _finish_two_stage(trace, k, L, y, family, conservative)
        if not ok:
            report.warnings.append(f"logistic refit did not converge at k={k}")
        models[k] = PairCoefficients(coefs, W.p, mu, family, names)
    return models, report


def fit_two_stage(W: LogDesign, y, lam: float, k_max: int, family: str = "gaussian",
                  conservative: bool = False, stage1=None):
    """
    Two-stage log-ratio lasso.

    Stage 1 screens features with the log-ratio lasso at ``lam``.  Stage 2
    enumerates all ratios among the screened features and runs exact
    forward stepwise selection for at most ``k_max`` steps, regressing
    ``y`` (or, when ``conservative``, the stage-1 fitted values).  The
    selected ratios are refit without penalty (least squares, or logistic
    IRLS for the binomial family).

    ``stage1`` may pass a precomputed ``fit_single_stage`` result.

    Returns
    -------
    theta : PairCoefficients
    report : FitReport
        ``report.warnings`` flags an empty or singleton screen.
    """
    if k_max < 0:
        raise DomainError("k_max must be nonnegative")
    models, report = two_stage_path(W, y, lam, [k_max], family, conservative, stage1)
    return models[k_max], report


def _logit_mean(y) -> float:
    m = float(np.clip(np.mean(y), 1e-6, 1 - 1e-6))
    return float(np.log(m / (1 - m)))


def fit_lasso(W: LogDesign, y, lam: float, family: str = "gaussian",
              init: Optional[LassoSolution] = None):
    """Plain lasso on log features; returns raw-scale ``(beta, intercept, solution)``."""
    sol = solve_lasso(LassoProblem(W.W, y, lam, family=family), init)
    return sol.coefficients, _raw_intercept(W, sol.intercept, sol.coefficients), sol


# ---------------------------------------------------------------------------
# prediction and serialization


def _model_logs(theta: PairCoefficients, X) -> np.ndarray:
    X = X.X if isinstance(X, Dataset) else np.asarray(X, dtype=float)
    if np.any(X <= 0):
        raise DomainError("prediction requires strictly positive features")
    L = np.log(X)
    if L.shape[1] == theta.p:
        return L
    unpaired = theta.feature_names and theta.feature_names[-1] == ONE_NAME
    if unpaired and L.shape[1] == theta.p - 1:
        return np.column_stack([L, np.zeros(L.shape[0])])
    raise DomainError(f"model has p={theta.p} features, data has {L.shape[1]}")


def linear_predictor(theta: PairCoefficients, d) -> np.ndarray:
    return logs_predictor(theta, _model_logs(theta, d))


def logs_predictor(theta: PairCoefficients, L) -> np.ndarray:
    """Linear predictor from raw log features ``L`` (one column per feature)."""
    L = np.asarray(L, dtype=float)
    eta = np.full(L.shape[0], theta.intercept)
    for (j, k), v in theta.pairs.items():
        eta += v * (L[:, j] - L[:, k])
    return eta


def predict(theta: PairCoefficients, d) -> np.ndarray:
    """Fitted values (probabilities for the binomial family) on positive data."""
    eta = linear_predictor(theta, d)
    return expit(eta) if theta.family == "binomial" else eta


def model_to_dict(theta: PairCoefficients, fit_meta: Optional[dict] = None) -> dict:
    return {
        "p": theta.p,
        "feature_names": list(theta.feature_names),
        "intercept": theta.intercept,
        "pairs": [
            {"j": j, "k": k, "name_j": theta.name(j), "name_k": theta.name(k), "theta": v}
            for (j, k), v in theta.pairs.items()
        ],
        "family": theta.family,
        "fit_meta": dict(fit_meta or {}),
    }


def model_from_dict(obj: dict) -> PairCoefficients:
    pairs = {(int(e["j"]), int(e["k"])): float(e["theta"]) for e in obj["pairs"]}
    return PairCoefficients(pairs=pairs, p=int(obj["p"]), intercept=float(obj["intercept"]),
                            family=obj.get("family", "gaussian"),
                            feature_names=tuple(obj.get("feature_names", ())))


def model_to_json(theta: PairCoefficients, fit_meta: Optional[dict] = None, **kw) -> str:
    return json.dumps(model_to_dict(theta, fit_meta), **kw)


def model_from_json(text: str) -> PairCoefficients:
    return model_from_dict(json.loads(text))


def ratio_table(theta: PairCoefficients) -> str:
    """Human-readable listing, one ``log(X_a / X_b) -> coefficient`` per line."""
    lines = [f"intercept -> {theta.intercept:.6g}"]
    items = sorted(theta.pairs.items(), key=lambda kv: -abs(kv[1]))
    for (j, k), v in items:
        a, b = theta.name(j), theta.name(k)
        if b == ONE_NAME:
            lines.append(f"log(X_{a}) -> {v:.6g}")
        else:
            lines.append(f"log(X_{a} / X_{b}) -> {v:.6g}")
    return "\n".join(lines)
