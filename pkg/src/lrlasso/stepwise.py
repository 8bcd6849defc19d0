"""
Greedy forward selection of log-ratio features.

``approx_forward_stepwise`` never builds the expanded ratio matrix: each
step pairs the feature whose univariate slope on the current residual is
most positive with the one whose slope is most negative.  Cost per step is
``O(n p)`` plus a least-squares refit on the selected ratios.

``exact_forward_stepwise`` is classical forward selection on an explicit
design (e.g. the output of :func:`lrlasso.data.expand_ratios`); candidates
are scored by ``|r' z_perp| / ||z_perp||`` after residualizing against the
intercept and the already selected columns.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .data import LogDesign
from .exceptions import DegenerateColumnError, DomainError

COLLINEAR_TOL = 1e-10


@dataclass
class StepwiseTrace:
    """
    Record of a forward-selection run.

    ``coefficients_per_step[t]`` and ``intercepts[t]`` hold the least-squares
    refit after ``t`` steps (``t = 0`` is the intercept-only model), so any
    prefix of the path can be read off without refitting.
    """

    selected: list = field(default_factory=list)
    columns: list = field(default_factory=list)
    coefficients_per_step: list = field(default_factory=list)
    intercepts: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    runtime_per_step: list = field(default_factory=list)
    stopped_early: bool = False
    stop_reason: Optional[str] = None

    @property
    def n_steps(self) -> int:
        return len(self.selected)

    def model(self, k: int):
        """Intercept and ``{selected item: coefficient}`` after ``min(k, n_steps)`` steps."""
        k = min(int(k), self.n_steps)
        coefs = self.coefficients_per_step[k]
        return self.intercepts[k], {s: float(c) for s, c in zip(self.selected[:k], coefs)}


def _ls_refit(F, y):
    """Least squares of ``y`` on ``[1, F]``; returns (intercept, coefs, residual)."""
    n = y.shape[0]
    if F.shape[1] == 0:
        mu = float(y.mean())
        return mu, np.zeros(0), y - mu
    A = np.column_stack([np.ones(n), F])
    coef = linalg.lstsq(A, y, check_finite=False)[0]
    return float(coef[0]), coef[1:], y - A @ coef


def exact_forward_stepwise(Z, y, k: int, pair_index: Optional[Sequence] = None) -> StepwiseTrace:
    """
    Forward stepwise regression of ``y`` on the columns of ``Z``.

    Parameters
    ----------
    Z : ndarray, shape (n, m)
    y : ndarray, shape (n,)
    k : int
        Maximum number of steps.
    pair_index : sequence, optional
        Labels for the columns (e.g. ratio pairs); ``selected`` reports
        these labels instead of column indices.

    Exactly collinear candidates (residualized norm below ``1e-10`` of the
    original) are skipped.  Selection stops early when no candidate has a
    nonzero correlation with the residual.
    """
    if k < 0:
        raise DomainError("number of steps must be nonnegative")
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(Z)):
        raise DomainError("design must be finite")
    n, m = Z.shape
    labels = list(range(m)) if pair_index is None else list(pair_index)
    trace = StepwiseTrace()
    Zr = Z - Z.mean(axis=0)
    base = np.maximum(1.0, np.sqrt(np.einsum("ij,ij->j", Z, Z)))
    r = y - y.mean()
    trace.coefficients_per_step.append(np.zeros(0))
    trace.intercepts.append(float(y.mean()))
    trace.residual_norms.append(float(linalg.norm(r)))
    taken = np.zeros(m, dtype=bool)
    for step in range(k):
        t0 = time.perf_counter()
        norms = np.sqrt(np.einsum("ij,ij->j", Zr, Zr))
        ok = (norms > COLLINEAR_TOL * base) & ~taken
        if not np.any(ok):
            trace.stopped_early, trace.stop_reason = True, "no admissible candidate"
            break
        score = np.full(m, -np.inf)
        score[ok] = np.abs(Zr[:, ok].T @ r) / norms[ok]
        j = int(np.argmax(score))
        if score[j] <= 1e-12 * (1.0 + linalg.norm(r)):
            trace.stopped_early, trace.stop_reason = True, "no correlated candidate"
            break
        q = Zr[:, j] / norms[j]
        Zr -= np.outer(q, q @ Zr)
        r = r - q * (q @ r)
        taken[j] = True
        trace.columns.append(j)
        trace.selected.append(labels[j])
        mu, coefs, res = _ls_refit(Z[:, trace.columns], y)
        trace.intercepts.append(mu)
        trace.coefficients_per_step.append(coefs)
        trace.residual_norms.append(float(linalg.norm(res)))
        trace.runtime_per_step.append(time.perf_counter() - t0)
    return trace


def standardize(L: np.ndarray) -> np.ndarray:
    sd = L.std(axis=0, ddof=1)
    if np.any(sd <= 1e-12 * (1.0 + np.abs(L).max(axis=0))):
        j = int(np.flatnonzero(sd <= 1e-12 * (1.0 + np.abs(L).max(axis=0)))[0])
        raise DegenerateColumnError(f"column {j} is constant; cannot standardize")
    return (L - L.mean(axis=0)) / sd


def approx_forward_stepwise(W, y, k: int) -> StepwiseTrace:
    """
    Approximate forward stepwise selection of log ratios.

    Parameters
    ----------
    W : LogDesign or ndarray
        Log features.  Selection uses mean-0/variance-1 standardized
        columns; refits use the raw log ratios ``log(x_i) - log(x_j)``.
    y : ndarray
    k : int
        Maximum number of ratios.

    Returns
    -------
    StepwiseTrace
        ``selected`` holds canonical pairs ``(a, b)`` with ``a < b``.  The
        trace is truncated, with ``stopped_early`` set, when all univariate
        slopes share one sign or a pair would be selected twice.
    """
    if k < 0:
        raise DomainError("number of steps must be nonnegative")
    L = W.raw() if isinstance(W, LogDesign) else np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)
    n = L.shape[0]
    S = standardize(L)
    trace = StepwiseTrace()
    r = y - y.mean()
    trace.coefficients_per_step.append(np.zeros(0))
    trace.intercepts.append(float(y.mean()))
    trace.residual_norms.append(float(linalg.norm(r)))
    ratios = []
    for step in range(k):
        t0 = time.perf_counter()
        slopes = (S.T @ r) / (n - 1)
        i = int(np.argmax(slopes))
        j = int(np.argmin(slopes))
        if not (slopes[i] > 0 and slopes[j] < 0):
            trace.stopped_early, trace.stop_reason = True, "univariate slopes share one sign"
            break
        pair = (min(i, j), max(i, j))
        if pair in trace.selected:
            trace.stopped_early, trace.stop_reason = True, "stalled on a selected pair"
            break
        trace.selected.append(pair)
        trace.columns.append(pair)
        ratios.append(L[:, pair[0]] - L[:, pair[1]])
        mu, coefs, res = _ls_refit(np.column_stack(ratios), y)
        r = res
        trace.intercepts.append(mu)
        trace.coefficients_per_step.append(coefs)
        trace.residual_norms.append(float(linalg.norm(res)))
        trace.runtime_per_step.append(time.perf_counter() - t0)
    return trace
