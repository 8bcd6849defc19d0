"""
Tests of the log-ratio hypothesis ``H0: sum_j beta_j = 0``.

Two tests are provided:

* :func:`f_test_sum_zero`, the classical F-test of one linear restriction
  in the full least-squares model (requires ``n > p + 1``);
* :func:`selective_sum_zero_test`, a post-selection test that conditions on
  the lasso selecting support ``M`` with signs ``s``.  Under ``H0`` for the
  selected submodel, ``eta' y`` is Gaussian truncated to ``[V-, V+]`` and its
  truncated CDF is uniform.

The selection event is the polyhedron ``{A y <= b}`` for the lasso with an
unpenalized intercept on a centered design.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, stats
from scipy.special import log_ndtr, ndtr

from .data import LogDesign
from .exceptions import (DomainError, InfeasibleTruncationError, NoTestError,
                         RankDeficientError, SelectionConsistencyError,
                         UnstableTruncationError)
from .solver import LassoProblem, LassoSolution, solve_lasso

EVENT_SLACK = 1e-8
ZERO_ROW_TOL = 1e-12


def _as_matrix(W) -> np.ndarray:
    return W.W if isinstance(W, LogDesign) else np.asarray(W, dtype=float)


# ---------------------------------------------------------------------------
# classical F-test


def f_test_sum_zero(W, y):
    """
    F-test of ``sum(beta) = 0`` in the least-squares fit of ``y`` on ``[1, W]``.

    Returns
    -------
    F : float
    p_value : float
        Upper tail of ``F(1, n - p - 1)``.

    Raises
    ------
    RankDeficientError
        If ``n <= p + 1`` or ``[1, W]`` is rank deficient.  The selective
        test remains available in that case.
    """
    X = _as_matrix(W)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p + 1:
        raise RankDeficientError(f"F-test needs n > p + 1 (n={n}, p={p}); "
                                 "use the selective test instead")
    A = np.column_stack([np.ones(n), X])
    Q, R = linalg.qr(A, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * diag.max():
        raise RankDeficientError("design [1, W] is rank deficient; use the selective test instead")
    coef = linalg.solve_triangular(R, Q.T @ y)
    resid = y - A @ coef
    df = n - p - 1
    s2 = float(resid @ resid) / df
    # 1' C 1 with C the beta block of (A'A)^{-1} = R^{-1} R^{-T}
    e = np.r_[0.0, np.ones(p)]
    v = linalg.solve_triangular(R, e, trans="T")
    quad = float(v @ v)
    num = float(coef[1:].sum()) ** 2
    scale = float(y @ y) + 1.0
    if s2 <= 1e-28 * scale:
        # noiseless fit: the restriction either holds exactly or is rejected outright
        if num <= 1e-20 * (1.0 + float(coef[1:] @ coef[1:])):
            return 0.0, 1.0
        return float("inf"), 0.0
    F = num / (s2 * quad)
    return float(F), float(stats.f.sf(F, 1, df))


# ---------------------------------------------------------------------------
# truncated Gaussian


def truncated_gaussian_cdf(x: float, mu: float, sd: float, lo: float, hi: float) -> float:
    """
    CDF at ``x`` of ``N(mu, sd^2)`` truncated to ``[lo, hi]``.

    When the interval lies entirely on one side of ``mu`` the ratio is
    evaluated from log tail probabilities, which keeps full relative
    accuracy far into the tails.

    Raises
    ------
    DomainError
        If ``hi < lo``, ``sd <= 0`` or ``x`` lies outside ``[lo, hi]``.
    UnstableTruncationError
        If the truncation mass underflows even in log form.
    """
    if not sd > 0:
        raise DomainError("sd must be positive")
    if hi < lo:
        raise DomainError(f"empty truncation interval [{lo}, {hi}]")
    if x < lo or x > hi:
        raise DomainError(f"x={x} outside truncation interval [{lo}, {hi}]")
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    z = (x - mu) / sd
    if a >= 0:
        # upper tails: F = (Q(a) - Q(z)) / (Q(a) - Q(b))
        la, lz, lb = log_ndtr(-a), log_ndtr(-z), log_ndtr(-b)
        if not np.isfinite(la):
            raise UnstableTruncationError(f"truncation interval [{lo}, {hi}] has no mass")
        num = -np.expm1(lz - la)
        den = -np.expm1(lb - la)
    elif b <= 0:
        # lower tails: F = (P(z) - P(a)) / (P(b) - P(a))
        la, lz, lb = log_ndtr(a), log_ndtr(z), log_ndtr(b)
        if not np.isfinite(lb):
            raise UnstableTruncationError(f"truncation interval [{lo}, {hi}] has no mass")
        num = np.exp(lz - lb) * -np.expm1(la - lz) if np.isfinite(lz) else 0.0
        den = -np.expm1(la - lb)
    else:
        pa = ndtr(a)
        num = ndtr(z) - pa
        den = ndtr(b) - pa
    if not den > 0:
        raise UnstableTruncationError(f"truncation interval [{lo}, {hi}] has no numerical mass")
    return float(min(1.0, max(0.0, num / den)))


# ---------------------------------------------------------------------------
# selection event and selective test


@dataclass
class SelectionEvent:
    """
    Polyhedron ``{A y <= b}`` on which the lasso selects ``(M, s)``.

    Rows are stacked as: upper dual feasibility for inactive features,
    lower dual feasibility for inactive features, then sign constraints
    for the active set.  ``blocks`` holds the row count of each block.
    """

    M: np.ndarray
    s: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lam: float
    blocks: tuple = ()
    solution: Optional[LassoSolution] = field(default=None, repr=False)

    def contains(self, y, slack: float = EVENT_SLACK) -> bool:
        r = self.A @ np.asarray(y, dtype=float) - self.b
        return bool(r.size == 0 or r.max() <= slack * (1.0 + np.abs(self.b).max()))


@dataclass
class PivotResult:
    eta: np.ndarray
    vminus: float
    vplus: float
    statistic: float
    sigma: float
    p_one_sided: float
    p_two_sided: float
    pivot: float
    sigma_estimated: bool = False
    M: tuple = ()
    s: tuple = ()


def _centered(X: np.ndarray) -> np.ndarray:
    return X - X.mean(axis=0)


def _active_inverse(XM: np.ndarray) -> np.ndarray:
    G = XM.T @ XM
    try:
        return linalg.inv(G, check_finite=False) if G.size else G
    except linalg.LinAlgError:
        raise RankDeficientError("selected columns are linearly dependent") from None


def event_matrices(Xc: np.ndarray, M, s, lam: float):
    """
    ``(A, b, blocks)`` for the lasso event ``{M_hat = M, s_hat = s}``.

    ``Xc`` must be column-centered.  With ``P = X_M (X_M' X_M)^{-1} X_M'``
    the three blocks are

    * ``X_{-M}' (I - P) / lam``, rhs ``1 - X_{-M}' X_M (X_M' X_M)^{-1} s``
    * ``-X_{-M}' (I - P) / lam``, rhs ``1 + X_{-M}' X_M (X_M' X_M)^{-1} s``
    * ``-diag(s) (X_M' X_M)^{-1} X_M'``, rhs ``-lam diag(s) (X_M' X_M)^{-1} s``
    """
    if not lam > 0:
        raise DomainError("the selection event needs lambda > 0")
    n, p = Xc.shape
    M = np.asarray(M, dtype=int)
    s = np.asarray(s, dtype=float)
    out = np.setdiff1d(np.arange(p), M)
    XM, XO = Xc[:, M], Xc[:, out]
    if M.size:
        Ginv = _active_inverse(XM)
        H = Ginv @ XM.T                      # (X_M'X_M)^{-1} X_M'
        resid_op = XO.T - (XO.T @ XM) @ H     # X_{-M}'(I - P_M)
        shift = XO.T @ XM @ (Ginv @ s)
        A3 = -s[:, None] * H
        b3 = -lam * s * (Ginv @ s)
    else:
        resid_op = XO.T.copy()
        shift = np.zeros(out.size)
        A3 = np.empty((0, n))
        b3 = np.empty(0)
    A = np.vstack([resid_op / lam, -resid_op / lam, A3])
    b = np.concatenate([1.0 - shift, 1.0 + shift, b3])
    return A, b, (out.size, out.size, M.size)


def lasso_selection_event(X, y, lam: float, *, solution: Optional[LassoSolution] = None,
                          slack: float = EVENT_SLACK) -> SelectionEvent:
    """
    Fit the lasso ``0.5 ||y - mu - X beta||^2 + lam ||beta||_1`` and return
    the polyhedral event of its selected support and signs.

    ``X`` is centered internally.  A precomputed ``solution`` on the
    centered design may be supplied.

    Raises
    ------
    SelectionConsistencyError
        If the observed ``y`` violates the constructed polyhedron by more
        than ``slack`` (relative), which signals an inaccurate solve.
    """
    Xc = _centered(_as_matrix(X))
    y = np.asarray(y, dtype=float)
    if solution is None:
        solution = solve_lasso(LassoProblem(Xc, y, lam))
    beta = solution.coefficients
    M = np.flatnonzero(beta)
    s = np.sign(beta[M])
    A, b, blocks = event_matrices(Xc, M, s, lam)
    ev = SelectionEvent(M=M, s=s, A=A, b=b, lam=float(lam), blocks=blocks, solution=solution)
    if not ev.contains(y, slack):
        worst = float((A @ y - b).max())
        raise SelectionConsistencyError(f"observed response violates its own selection event by {worst:g}")
    return ev


def ols_sigma(X, y) -> float:
    """Residual sd of the full least-squares fit of ``y`` on ``[1, X]``."""
    X = _as_matrix(X)
    n, p = X.shape
    if n <= p + 1:
        raise RankDeficientError(f"cannot estimate sigma with n={n} <= p+1={p + 1}; supply sigma")
    A = np.column_stack([np.ones(n), X])
    coef = linalg.lstsq(A, y, check_finite=False)[0]
    r = y - A @ coef
    return float(np.sqrt(r @ r / (n - p - 1)))


def truncation_limits(event: SelectionEvent, z: np.ndarray, c: np.ndarray):
    """``(V-, V+)`` such that ``z + t c`` lies in the event iff ``V- <= t <= V+``."""
    Ac = event.A @ c
    res = event.b - event.A @ z
    neg = Ac < -ZERO_ROW_TOL
    pos = Ac > ZERO_ROW_TOL
    vminus = float(np.max(res[neg] / Ac[neg])) if neg.any() else -np.inf
    vplus = float(np.min(res[pos] / Ac[pos])) if pos.any() else np.inf
    return vminus, vplus


def selective_sum_zero_test(event: SelectionEvent, X, y, sigma: Optional[float] = None) -> PivotResult:
    """
    Selective test of ``1' beta_M = 0`` given the lasso selected ``(M, s)``.

    With ``eta = X_M (X_M' X_M)^{-1} 1``, the statistic is ``t = eta' y`` and
    the pivot is the CDF of ``N(0, sigma^2 ||eta||^2)`` truncated to
    ``[V-, V+]`` evaluated at ``t``.  ``p_one_sided`` is its upper tail
    ``1 - pivot``, small when ``1' beta_M > 0``.

    Parameters
    ----------
    event : SelectionEvent
    X : ndarray or LogDesign
        The design the event was built from (centered internally).
    y : ndarray
    sigma : float, optional
        Noise sd.  Estimated from the full least-squares fit when omitted.
    """
    Xc = _centered(_as_matrix(X))
    y = np.asarray(y, dtype=float)
    M = np.asarray(event.M, dtype=int)
    if M.size == 0:
        raise NoTestError("the lasso selected no features; there is nothing to test")
    estimated = sigma is None
    if estimated:
        sigma = ols_sigma(Xc, y)
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    XM = Xc[:, M]
    eta = XM @ (_active_inverse(XM) @ np.ones(M.size))
    nrm2 = float(eta @ eta)
    c = eta / nrm2
    t = float(eta @ y)
    z = y - c * t
    vminus, vplus = truncation_limits(event, z, c)
    tol = 1e-8 * (1.0 + abs(t))
    if vminus > vplus + tol:
        raise InfeasibleTruncationError(f"V- = {vminus:g} exceeds V+ = {vplus:g}")
    if not (vminus - tol <= t <= vplus + tol):
        raise InfeasibleTruncationError(f"statistic {t:g} outside [{vminus:g}, {vplus:g}]")
    tt = min(max(t, vminus), vplus)
    piv = truncated_gaussian_cdf(tt, 0.0, sigma * np.sqrt(nrm2), vminus, vplus)
    p1 = 1.0 - piv
    return PivotResult(eta=eta, vminus=vminus, vplus=vplus, statistic=t, sigma=float(sigma),
                       p_one_sided=p1, p_two_sided=1.0 - 2.0 * abs(p1 - 0.5), pivot=piv,
                       sigma_estimated=estimated, M=tuple(int(j) for j in M),
                       s=tuple(int(v) for v in event.s))


def default_selective_lambda(X, sigma: float = 1.0) -> float:
    """``2 sigma`` times the median centered column norm of ``X``."""
    Xc = _centered(_as_matrix(X))
    return float(2.0 * sigma * np.median(np.linalg.norm(Xc, axis=0)))
