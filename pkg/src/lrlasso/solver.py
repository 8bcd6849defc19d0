"""
Weighted L1-penalized regression with an unpenalized intercept.

The Gaussian objective is

    0.5 * sum_i w_i (y_i - mu - x_i' beta)^2 + lam * ||beta||_1

and the binomial objective replaces the squared loss with the weighted
negative log-likelihood of a logistic model.  Problems flagged
``sum_zero`` additionally require ``sum(beta) == 0``; they are solved by
appending heavily weighted all-ones observations (one for Gaussian, two
with responses 1 and 0 for binomial) that carry no intercept, running
coordinate descent on that augmented problem, and finishing with an exact
active-set solve of the equality-constrained problem.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from ._cd import cd_gram
from .data import LogDesign
from .exceptions import ConvergenceError, DomainError

log = logging.getLogger(__name__)

KKT_TOL = 1e-7
CHANGE_TOL = 1e-9
MAX_SWEEPS = 100_000
WARM_SWEEPS = 200
AUG_WEIGHT_FACTOR = 1e6
AUG_ESCALATION = 100.0
AUG_MAX_ESCALATIONS = 2
IRLS_WEIGHT_FLOOR = 1e-5
MAX_IRLS = 100


@dataclass
class LassoProblem:
    """
    A (possibly sum-to-zero constrained) weighted lasso.

    ``intercept_mask`` marks the rows whose linear predictor includes the
    intercept; it defaults to all ones and is zero only on augmentation rows.
    """

    design: np.ndarray
    response: np.ndarray
    lam: float
    weights: Optional[np.ndarray] = None
    family: str = "gaussian"
    sum_zero: bool = False
    intercept_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        if X.ndim != 2:
            raise DomainError("design must be 2-d")
        y = np.asarray(self.response, dtype=float).ravel()
        n = X.shape[0]
        if y.shape[0] != n:
            raise DomainError("response length does not match design")
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        u = np.ones(n) if self.intercept_mask is None else np.asarray(self.intercept_mask, dtype=float)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise DomainError("non-finite input to lasso solver")
        if np.any(w <= 0):
            raise DomainError("observation weights must be positive")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DomainError("penalty level must be a nonnegative real")
        if self.family not in ("gaussian", "binomial"):
            raise DomainError(f"unknown family {self.family!r}")
        if self.family == "binomial" and not np.all((y == 0) | (y == 1)):
            raise DomainError("binomial response must be 0/1")
        self.design, self.response, self.weights, self.intercept_mask = X, y, w, u
        self.lam = float(self.lam)

    penalize_intercept = False

    @property
    def n_features(self) -> int:
        return self.design.shape[1]


@dataclass
class LassoSolution:
    coefficients: np.ndarray
    intercept: float
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    constraint_residual: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)


# ---------------------------------------------------------------------------
# objective and optimality


def linear_predictor(prob: LassoProblem, beta, mu) -> np.ndarray:
    return prob.intercept_mask * mu + prob.design @ beta


def objective(prob: LassoProblem, beta, mu) -> float:
    eta = linear_predictor(prob, beta, mu)
    w, y = prob.weights, prob.response
    if prob.family == "gaussian":
        loss = 0.5 * np.sum(w * (y - eta) ** 2)
    else:
        # log(1 + e^eta) - y*eta, stable for large |eta|
        loss = np.sum(w * (np.logaddexp(0.0, eta) - y * eta))
    return float(loss + prob.lam * np.sum(np.abs(beta)))


def _profiled_violation(g, beta, pen):
    """
    Min over the multiplier nu of the max KKT violation of ``g - nu``.

    Each coordinate admits an interval of nu values with zero violation; the
    max violation is ``max(0, max(lo) - nu, nu - min(hi))``, minimized at the
    midpoint.
    """
    s = np.sign(beta)
    active = s != 0
    lo = np.where(active, g - pen * s, g - pen)
    hi = np.where(active, g - pen * s, g + pen)
    top, bot = lo.max(), hi.min()
    return max(0.0, 0.5 * (top - bot)), 0.5 * (top + bot)


def kkt_violation(prob: LassoProblem, beta, mu) -> float:
    beta = np.asarray(beta, dtype=float)
    eta = linear_predictor(prob, beta, mu)
    if prob.family == "gaussian":
        r = prob.weights * (prob.response - eta)
    else:
        r = prob.weights * (prob.response - expit(eta))
    g = prob.design.T @ r
    viol_mu = abs(float(prob.intercept_mask @ r))
    if prob.n_features == 0:
        return viol_mu
    pen = np.full(g.shape, prob.lam)
    if prob.sum_zero:
        viol, _ = _profiled_violation(g, beta, pen)
    else:
        s = np.sign(beta)
        viol = np.where(s != 0, np.abs(g - pen * s), np.maximum(0.0, np.abs(g) - pen)).max()
    return float(max(viol, viol_mu))


def kkt_check(prob: LassoProblem, sol: LassoSolution) -> float:
    """
    Largest violation of the lasso optimality conditions at ``sol``.

    Active coordinates contribute ``|x_j' r - lam * sign(beta_j)|`` and
    inactive ones ``max(0, |x_j' r| - lam)``, with ``r`` the weighted
    residual (``y - p`` for binomial).  For sum-zero problems the scalar
    multiplier of the constraint is profiled out first.  The intercept
    stationarity ``|sum_i r_i|`` is included.
    """
    return kkt_violation(prob, sol.coefficients, sol.intercept)


def lambda_max(prob: LassoProblem) -> float:
    """Smallest penalty at which the all-zero coefficient vector is optimal."""
    w, u, y = prob.weights, prob.intercept_mask, prob.response
    mu = float(np.sum(w * u * y) / np.sum(w * u * u))
    if prob.family == "binomial":
        ybar = min(max(mu, 1e-12), 1 - 1e-12)
        r = w * (y - ybar * u)
    else:
        r = w * (y - mu * u)
    g = prob.design.T @ r
    if g.size == 0:
        return 0.0
    if prob.sum_zero:
        return float(0.5 * (g.max() - g.min()))
    return float(np.abs(g).max())


# ---------------------------------------------------------------------------
# quadratic core


def _gram(D, z, w):
    Dw = D * w[:, None]
    return D.T @ Dw, Dw.T @ z


def _solve_system(K, r):
    """Symmetric solve; falls back to least squares when ``K`` is (nearly) singular."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            x = linalg.solve(K, r, assume_a="sym", check_finite=False)
        if np.all(np.isfinite(x)) and np.allclose(K @ x, r, rtol=1e-8, atol=1e-10 * (1 + np.abs(r).max())):
            return x
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
        pass
    return linalg.lstsq(K, r, check_finite=False)[0]


def _refine(G, c, pen, b, eq=None, tol=None, max_iter=None):
    """
    Feature-sign active-set search for ``0.5 b'Gb - c'b + pen.|b|``.

    With ``eq`` (0/1 vector) the iterate is kept on ``eq' b = 0``; the
    multiplier is profiled for the inactive optimality check and solved
    jointly on the active set.  Returns ``(b, converged, iterations)``.
    """
    q = b.shape[0]
    b = b.copy()
    unpen = pen == 0
    scale = 1.0 + np.abs(c).max() if q else 1.0
    if tol is None:
        tol = 1e-11 * scale
    if max_iter is None:
        max_iter = 20 * q + 200

    def f(v):
        return 0.5 * v @ G @ v - c @ v + pen @ np.abs(v)

    for it in range(max_iter):
        g = c - G @ b
        act = (b != 0) | unpen
        s = np.sign(b)
        if eq is not None:
            cmask = eq != 0
            on = cmask & act
            if np.any(on):
                # active constrained coordinates pin the multiplier
                nu = float(np.mean(g[on] - pen[on] * s[on]))
            elif np.any(cmask):
                _, nu = _profiled_violation(g[cmask], b[cmask], pen[cmask])
            else:
                nu = 0.0
            h = g - nu * eq
        else:
            h = g
        stat = np.abs(h[act] - pen[act] * s[act]).max() if np.any(act) else 0.0
        target = s.copy()
        if stat <= tol:
            excess = np.where(act, -np.inf, np.abs(h) - pen)
            if not np.any(excess > tol):
                return b, True, it
            if eq is None:
                j = int(np.argmax(excess))
                target[j] = np.sign(h[j])
            else:
                up = np.where(act, -np.inf, h - pen)
                dn = np.where(act, -np.inf, -h - pen)
                if up.max() > tol:
                    target[int(np.argmax(up))] = 1.0
                if dn.max() > tol:
                    target[int(np.argmax(dn))] = -1.0
        A = (target != 0) | unpen
        idx = np.flatnonzero(A)
        r = c[idx] - pen[idx] * target[idx]
        GA = G[np.ix_(idx, idx)]
        if eq is not None and np.any(eq[idx] != 0):
            a = eq[idx]
            K = np.zeros((idx.size + 1, idx.size + 1))
            K[:-1, :-1] = GA
            K[:-1, -1] = a
            K[-1, :-1] = a
            x = _solve_system(K, np.append(r, 0.0))[:-1]
        else:
            x = _solve_system(GA, r)
        b_new = np.zeros(q)
        b_new[idx] = x
        tpen = ~unpen[idx]
        if np.all(np.sign(x[tpen]) == target[idx][tpen]):
            if f(b_new) <= f(b) + 1e-14 * scale * (1 + np.abs(b).sum()):
                b = b_new
                continue
        # discrete line search over sign changes of the current iterate
        d = b_new - b
        cand = [1.0]
        crossings = {}
        for j in np.flatnonzero((b != 0) & ~unpen & (np.sign(b_new) != np.sign(b))):
            t = b[j] / (b[j] - b_new[j])
            if 0.0 < t < 1.0:
                cand.append(t)
                crossings.setdefault(t, []).append(j)
        best, best_val = b, f(b)
        for t in sorted(set(cand)):
            v = b + t * d
            for j in crossings.get(t, []):
                v[j] = 0.0
            val = f(v)
            if val < best_val:
                best, best_val = v, val
        if best is b:
            # no descent along the segment: retry from the subproblem point
            # only if it is an improvement, otherwise give up
            return b, False, it
        b = best
    return b, False, max_iter


def _quadratic_lasso(G, c, pen, b0, *, eq=None, aug_G=None, aug_c=None, max_sweeps=MAX_SWEEPS,
                     change_tol=CHANGE_TOL):
    """
    Coordinate descent followed by active-set refinement.

    With a constraint ``eq' b = 0`` (``eq`` a 0/1 vector) coordinate descent
    runs on ``aug_G`` (the Gram matrix of the augmented design) and the
    refinement enforces the equality exactly on the unaugmented ``G``.
    """
    b = np.array(b0, dtype=float)
    if eq is not None:
        sweeps_cap = min(max_sweeps, WARM_SWEEPS)
        history = np.empty(sweeps_cap)
        sweeps, _ = cd_gram(aug_G, c if aug_c is None else aug_c, pen, b, sweeps_cap,
                            change_tol, history)
        # put the coordinate-descent point on the constraint without
        # touching its zero pattern
        nz = np.flatnonzero(b * eq)
        if nz.size:
            b[nz] -= b[nz].sum() / nz.size
    else:
        history = np.empty(max(max_sweeps, 1))
        sweeps, _ = cd_gram(G, c, pen, b, max_sweeps, change_tol, history)
    hist = history[:sweeps]
    if hist.size > 1:
        rise = np.diff(hist)
        assert np.all(rise <= 1e-9 * (1.0 + np.abs(hist[:-1]))), "coordinate descent increased the objective"
    b, ok, refine_iters = _refine(G, c, pen, b, eq=eq)
    return b, ok, sweeps, refine_iters, hist


# ---------------------------------------------------------------------------
# public solvers


def _augment(prob: LassoProblem, B: float) -> LassoProblem:
    p = prob.n_features
    if prob.family == "gaussian":
        Xa = np.ones((1, p))
        ya = np.zeros(1)
        wa = np.full(1, B)
    else:
        Xa = np.ones((2, p))
        ya = np.array([1.0, 0.0])
        wa = np.full(2, B)
    return LassoProblem(
        design=np.vstack([prob.design, Xa]),
        response=np.concatenate([prob.response, ya]),
        lam=prob.lam,
        weights=np.concatenate([prob.weights, wa]),
        family=prob.family,
        sum_zero=False,
        intercept_mask=np.concatenate([prob.intercept_mask, np.zeros(len(ya))]),
    )


def _initial(prob, init):
    p = prob.n_features
    if init is not None:
        beta = np.array(init.coefficients, dtype=float)
        if beta.shape != (p,):
            raise DomainError("warm start has the wrong dimension")
        return np.concatenate([[init.intercept], beta])
    w, u, y = prob.weights, prob.intercept_mask, prob.response
    mu = float(np.sum(w * u * y) / np.sum(w * u * u))
    if prob.family == "binomial":
        mu = float(np.log(np.clip(mu, 1e-6, 1 - 1e-6) / (1 - np.clip(mu, 1e-6, 1 - 1e-6))))
    return np.concatenate([[mu], np.zeros(p)])


def _solve_gaussian(prob, b, B, max_sweeps):
    D = np.column_stack([prob.intercept_mask, prob.design])
    G, c = _gram(D, prob.response, prob.weights)
    pen = np.concatenate([[0.0], np.full(prob.n_features, prob.lam)])
    aug_G = eq = None
    if prob.sum_zero:
        eq = _constraint_vector(prob)
        aug_G = G + B * np.outer(eq, eq)
    return _quadratic_lasso(G, c, pen, b, eq=eq, aug_G=aug_G, max_sweeps=max_sweeps)


def _constraint_vector(prob):
    """Sum-zero constraint over the features; position 0 is the intercept."""
    return np.concatenate([[0.0], np.ones(prob.n_features)])


def _solve_binomial(prob, b, B, max_sweeps, kkt_tol):
    D = np.column_stack([prob.intercept_mask, prob.design])
    pen = np.concatenate([[0.0], np.full(prob.n_features, prob.lam)])
    aug = _augment(prob, B) if prob.sum_zero else None
    Da = np.column_stack([aug.intercept_mask, aug.design]) if aug is not None else None

    def pobj(v):
        return objective(prob, v[1:], v[0])

    total_sweeps = total_refine = 0
    ok = False
    for it in range(MAX_IRLS):
        eta = D @ b
        p = expit(eta)
        v = np.maximum(p * (1 - p), IRLS_WEIGHT_FLOOR)
        z = eta + (prob.response - p) / v
        G, c = _gram(D, z, prob.weights * v)
        aug_G = aug_c = None
        if aug is not None:
            eta_a = Da @ b
            pa = expit(eta_a)
            va = np.maximum(pa * (1 - pa), IRLS_WEIGHT_FLOOR)
            aug_G, aug_c = _gram(Da, eta_a + (aug.response - pa) / va, aug.weights * va)
        b_new, ok, sweeps, refine_iters, _ = _quadratic_lasso(
            G, c, pen, b, eq=_constraint_vector(prob) if prob.sum_zero else None,
            aug_G=aug_G, aug_c=aug_c,
            max_sweeps=max_sweeps)
        total_sweeps += sweeps
        total_refine += refine_iters
        f_old = pobj(b)
        f_new = pobj(b_new)
        halvings = 0
        while f_new > f_old + 1e-12 * (1 + abs(f_old)) and halvings < 40:
            b_new = 0.5 * (b + b_new)
            f_new = pobj(b_new)
            halvings += 1
        change = np.abs(b_new - b).max()
        b = b_new
        if change <= CHANGE_TOL * (1 + np.abs(b).max()):
            if kkt_violation(prob, b[1:], b[0]) <= kkt_tol:
                ok = True
                break
    else:
        ok = False
    return b, ok, total_sweeps, total_refine, it + 1


def solve_lasso(prob: LassoProblem, init: Optional[LassoSolution] = None, *,
                max_sweeps: int = MAX_SWEEPS, kkt_tol: float = KKT_TOL) -> LassoSolution:
    """
    Minimize the penalized objective of ``prob``.

    Parameters
    ----------
    prob : LassoProblem
    init : LassoSolution, optional
        Warm start.
    max_sweeps : int
        Coordinate-descent sweep budget.
    kkt_tol : float
        A solution is reported as converged only when :func:`kkt_check`
        is at or below this value.

    Returns
    -------
    LassoSolution
        Never raises on non-convergence; inspect ``converged`` and ``info``.
    """
    b0 = _initial(prob, init)
    p = prob.n_features
    B = AUG_WEIGHT_FACTOR * float(prob.weights.sum())
    info = {}
    for attempt in range(AUG_MAX_ESCALATIONS + 1 if prob.sum_zero else 1):
        if prob.family == "gaussian":
            b, ok, sweeps, refine_iters, hist = _solve_gaussian(prob, b0, B, max_sweeps)
            info["objective_history"] = hist
            irls = 0
        else:
            b, ok, sweeps, refine_iters, irls = _solve_binomial(prob, b0, B, max_sweeps, kkt_tol)
        beta, mu = b[1:], float(b[0])
        csum = abs(float(beta.sum())) if prob.sum_zero else 0.0
        kkt = kkt_violation(prob, beta, mu)
        ctol = 1e-8 * np.abs(beta).sum() + 1e-12
        converged = bool(ok and kkt <= kkt_tol and csum <= ctol)
        info.update(augmentation_weight=B if prob.sum_zero else None, sweeps=sweeps,
                    refine_iterations=refine_iters, irls_iterations=irls, attempts=attempt + 1)
        if converged or not prob.sum_zero:
            break
        log.debug("constrained solve not converged (kkt=%g, sum=%g); escalating weight", kkt, csum)
        B *= AUG_ESCALATION
        b0 = b
    return LassoSolution(coefficients=beta, intercept=mu, objective=objective(prob, beta, mu),
                         kkt_residual=kkt, iterations=sweeps + refine_iters, converged=converged,
                         constraint_residual=csum, info=info)


def constrained_lasso(W, y, gamma: float, family: str = "gaussian",
                      init: Optional[LassoSolution] = None, weights=None, *,
                      strict: bool = True) -> LassoSolution:
    """
    Lasso on log features subject to ``sum(beta) == 0``.

    ``W`` is a centered, unscaled :class:`LogDesign` (or a plain matrix).
    With ``strict`` a constraint residual above tolerance after all weight
    escalations raises :class:`ConvergenceError`.
    """
    X = W.W if isinstance(W, LogDesign) else np.asarray(W, dtype=float)
    if isinstance(W, LogDesign) and W.scaled:
        raise DomainError("constrained lasso expects an unscaled log design")
    prob = LassoProblem(X, y, gamma, weights=weights, family=family, sum_zero=True)
    sol = solve_lasso(prob, init)
    ctol = 1e-8 * np.abs(sol.coefficients).sum() + 1e-12
    if strict and sol.constraint_residual > ctol:
        raise ConvergenceError(f"sum-zero residual {sol.constraint_residual:g} exceeds {ctol:g}")
    return sol


def gamma_max(W, y, family: str = "gaussian", weights=None) -> float:
    X = W.W if isinstance(W, LogDesign) else np.asarray(W, dtype=float)
    return lambda_max(LassoProblem(X, y, 0.0, weights=weights, family=family, sum_zero=True))


def geometric_grid(top: float, n_lambda: int, lambda_min_ratio: float) -> np.ndarray:
    if n_lambda < 2:
        raise DomainError("a penalty path needs at least two grid points")
    if not 0 < lambda_min_ratio < 1:
        raise DomainError("lambda_min_ratio must lie in (0, 1)")
    return top * np.geomspace(1.0, lambda_min_ratio, n_lambda)


def lambda_path(W, y, family: str = "gaussian", n_lambda: int = 50,
                lambda_min_ratio: float = 1e-3, *, sum_zero: bool = True,
                grid=None, weights=None):
    """
    Warm-started solutions along a decreasing geometric penalty grid.

    Returns a list of ``(penalty, LassoSolution)`` starting at the
    smallest penalty with an all-zero solution.
    """
    X = W.W if isinstance(W, LogDesign) else np.asarray(W, dtype=float)
    prob = LassoProblem(X, y, 0.0, weights=weights, family=family, sum_zero=sum_zero)
    if grid is None:
        grid = geometric_grid(lambda_max(prob), n_lambda, lambda_min_ratio)
    out = []
    sol = None
    for lam in grid:
        prob.lam = float(lam)
        sol = solve_lasso(prob, sol)
        out.append((float(lam), sol))
    return out


# ---------------------------------------------------------------------------
# reference solver on an explicit design


def prox_grad_lasso(Z, y, lam: float, *, max_iter: int = 200_000, tol: float = 1e-12,
                    theta0=None):
    """
    Accelerated proximal gradient (FISTA with adaptive restart) for

        0.5 * ||y - mu - Z theta||^2 + lam * ||theta||_1

    with an unpenalized intercept.  Intended for explicit log-ratio
    designs, where it serves as an independent reference.

    Returns
    -------
    theta, mu, objective, iterations
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    zbar = Z.mean(axis=0)
    ybar = y.mean()
    Zc = Z - zbar
    yc = y - ybar
    m = Z.shape[1]
    if m == 0:
        mu = ybar
        return np.zeros(0), mu, 0.5 * float(np.sum((y - mu) ** 2)), 0
    L = linalg.norm(Zc, 2) ** 2
    if L == 0:
        theta = np.zeros(m)
        return theta, ybar, 0.5 * float(np.sum(yc ** 2)), 0
    step = 1.0 / L
    ZtY = Zc.T @ yc
    ZtZ = Zc.T @ Zc if m <= 4 * Z.shape[0] else None

    def grad(v):
        if ZtZ is not None:
            return ZtZ @ v - ZtY
        return Zc.T @ (Zc @ v) - ZtY

    def F(v):
        r = yc - Zc @ v
        return 0.5 * r @ r + lam * np.abs(v).sum()

    gscale = 1.0 + np.abs(ZtY).max()
    x = np.zeros(m) if theta0 is None else np.array(theta0, dtype=float)
    v = x.copy()
    t = 1.0
    f_prev = F(x)
    restarted = False
    it = 0
    for it in range(1, max_iter + 1):
        u = v - step * grad(v)
        x_new = np.sign(u) * np.maximum(np.abs(u) - step * lam, 0.0)
        f_new = F(x_new)
        if f_new > f_prev:
            if restarted:
                # a plain proximal step no longer descends: roundoff floor
                break
            t = 1.0
            v = x.copy()
            restarted = True
            continue
        restarted = False
        # gradient-mapping norm: zero exactly at a minimizer
        gmap = np.abs(v - x_new).max() / step
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        v = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        f_prev = f_new
        if gmap <= tol * gscale:
            break
    mu = ybar - zbar @ x
    return x, float(mu), float(F(x)), it
