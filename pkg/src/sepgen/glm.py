"""L1-penalized generalized linear models via coordinate descent.

Families: gaussian, binomial, and symmetric multinomial logistic. The fitted
objective, with case weights ``w`` summing to ``W`` and linear predictor
``eta = alpha + X theta``, is

    -(1/W) * sum_i w_i * loglik_i(eta_i)  +  lam * ||theta||_1

with the intercept unpenalized. Regularization paths use warm starts along a
descending grid; model selection is by extended BIC. Solutions are verified
against the exact subgradient conditions of that objective, so every returned
coefficient vector is a certified optimum up to ``kkt_tol``.

All fits are deterministic: identical inputs give bitwise-identical paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._cd import wls_lasso, gaussian_path
from .errors import NonConvergenceError

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"
MULTINOMIAL = "multinomial"

EBIC_GAMMA = 0.25
N_LAMBDA = 50
LAMBDA_MIN_RATIO = 0.01
COEF_TOL = 1e-7
KKT_TOL = 1e-6
MAX_SWEEPS = 10_000

_ETA_CLIP = 30.0
_VAR_FLOOR = 1e-5
_PROB_CLIP = 1e-12


@dataclass(frozen=True)
class GlmFamily:
    """Response family tag; multinomial carries its class count."""

    tag: str
    n_classes: int = 1

    def __post_init__(self):
        if self.tag not in (GAUSSIAN, BINOMIAL, MULTINOMIAL):
            raise ValueError(f"unknown family {self.tag!r}")
        if self.tag == MULTINOMIAL and self.n_classes < 2:
            raise ValueError("multinomial requires at least 2 classes")

    @classmethod
    def gaussian(cls) -> "GlmFamily":
        return cls(GAUSSIAN)

    @classmethod
    def binomial(cls) -> "GlmFamily":
        return cls(BINOMIAL)

    @classmethod
    def multinomial(cls, n_classes: int) -> "GlmFamily":
        return cls(MULTINOMIAL, n_classes)


@dataclass(frozen=True)
class LassoPath:
    """Solutions along a descending lambda grid.

    ``coefficients`` has shape (k, p) for gaussian/binomial and (k, p, L) for
    multinomial; ``intercepts`` is (k,) or (k, L) accordingly. ``df`` counts
    nonzero slopes, grouping a multinomial predictor's class block as one.
    ``log_likelihoods`` evaluates the penalized solutions themselves;
    ``refit_log_likelihoods`` evaluates the unpenalized refit on each
    solution's support, which is what model selection compares (the penalized
    likelihood conflates support changes with shrinkage relief).
    """

    family: GlmFamily
    lambda_grid: np.ndarray
    intercepts: np.ndarray
    coefficients: np.ndarray
    log_likelihoods: np.ndarray
    df: np.ndarray
    refit_log_likelihoods: np.ndarray = None
    refit_coefficients: np.ndarray = None

    def __post_init__(self):
        if self.refit_log_likelihoods is None:
            object.__setattr__(self, "refit_log_likelihoods", np.asarray(self.log_likelihoods))
        if self.refit_coefficients is None:
            object.__setattr__(self, "refit_coefficients", np.asarray(self.coefficients))

    def __len__(self) -> int:
        return len(self.lambda_grid)


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda grid must be a non-empty 1-d sequence")
    if (grid <= 0).any():
        raise ValueError("lambda grid entries must be positive")
    if (np.diff(grid) >= 0).any():
        raise ValueError("lambda grid must be strictly descending")
    return grid


def default_lambda_grid(lambda_max: float) -> np.ndarray:
    lambda_max = max(float(lambda_max), 1e-12)
    return np.geomspace(lambda_max, LAMBDA_MIN_RATIO * lambda_max, N_LAMBDA)


def _expit(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CLIP, _ETA_CLIP)))


def _softmax(eta: np.ndarray) -> np.ndarray:
    shifted = eta - eta.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    codes = y.astype(np.intp)
    out = np.zeros((len(codes), n_classes))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def _validate_inputs(X, y, family, case_weights):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("design matrix must be 2-d with at least one column")
    if y.shape != (X.shape[0],):
        raise ValueError("response length must match the design")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise ValueError("design and response must be finite")
    if case_weights is None:
        w = np.ones(X.shape[0])
    else:
        w = np.asarray(case_weights, dtype=np.float64)
        if w.shape != (X.shape[0],):
            raise ValueError("case weights length must match the design")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("case weights must be finite and nonnegative")
        if w.sum() <= 0:
            raise ValueError("case weights must not be all zero")
    if family.tag == BINOMIAL and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("binomial response must be 0/1")
    if family.tag == MULTINOMIAL:
        if not (y == np.round(y)).all():
            raise ValueError("multinomial response must be integer class codes")
        if y.min() < 0 or y.max() > family.n_classes - 1:
            raise ValueError("multinomial class codes out of range")
    return X, y, w


def _gaussian_loglik(y, eta, w, w_total):
    resid = y - eta
    sigma2 = max(float(np.dot(w, resid * resid)) / w_total, 1e-300)
    return -0.5 * w_total * (np.log(2.0 * np.pi * sigma2) + 1.0)


def _binomial_loglik(y, eta, w):
    mu = np.clip(_expit(eta), _PROB_CLIP, 1.0 - _PROB_CLIP)
    return float(np.dot(w, y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))


def _multinomial_loglik(y_hot, eta, w):
    mu = np.clip(_softmax(eta), _PROB_CLIP, 1.0)
    return float(np.dot(w, (y_hot * np.log(mu)).sum(axis=1)))


def fit_path(
    X,
    y,
    family: GlmFamily,
    case_weights=None,
    lambda_grid=None,
    *,
    coef_tol: float = COEF_TOL,
    kkt_tol: float = KKT_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> LassoPath:
    """Fit the full regularization path for one penalized GLM.

    The caller is responsible for column standardization of ``X``; the
    intercept is handled internally and left unpenalized. When
    ``lambda_grid`` is omitted a 50-point geometric grid from the data's
    lambda_max down to 1% of it is used, so the first solution has all
    slopes exactly zero.
    """
    X, y, w = _validate_inputs(X, y, family, case_weights)
    if lambda_grid is not None:
        grid = _check_grid(lambda_grid)
    else:
        grid = None
    if family.tag == GAUSSIAN:
        return _fit_gaussian(X, y, w, grid, coef_tol, kkt_tol, max_sweeps)
    if family.tag == BINOMIAL:
        return _fit_logistic(X, y, w, grid, family, coef_tol, kkt_tol, max_sweeps)
    return _fit_multinomial(X, y, w, grid, family, coef_tol, kkt_tol, max_sweeps)


def _fit_gaussian(X, y, w, grid, coef_tol, kkt_tol, max_sweeps):
    w_total = float(w.sum())
    wn = w / w_total
    xm = wn @ X
    ym = float(wn @ y)
    Xc = X - xm
    Wc = wn[:, None] * Xc
    G = Xc.T @ Wc
    b = Wc.T @ y
    if grid is None:
        grid = default_lambda_grid(np.abs(b).max())
    thetas, ok = gaussian_path(G, b, grid, coef_tol, 0.5 * kkt_tol, max_sweeps)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise NonConvergenceError(
            f"coordinate descent did not converge at lambda={grid[bad]:.6g}",
            achieved_tolerance=float(np.abs(b - G @ thetas[bad]).max()),
        )
    intercepts = ym - thetas @ xm
    k = len(grid)
    p = X.shape[1]
    loglik = np.empty(k)
    refit_ll = np.empty(k)
    refit_coefs = np.zeros((k, p))
    df = np.empty(k, dtype=np.int64)
    base_var = float(wn @ (y - ym) ** 2)
    refit_cache: dict[tuple, tuple] = {}
    for i in range(k):
        eta = intercepts[i] + X @ thetas[i]
        loglik[i] = _gaussian_loglik(y, eta, w, w_total)
        df[i] = int(np.count_nonzero(thetas[i]))
        support = tuple(np.flatnonzero(thetas[i]).tolist())
        if support not in refit_cache:
            full = np.zeros(p)
            if support:
                sel = list(support)
                # lstsq tolerates exactly collinear support columns; the
                # explained variance is unique even when coefficients are not
                coef = np.linalg.lstsq(G[np.ix_(sel, sel)], b[sel], rcond=None)[0]
                sigma2 = max(base_var - float(b[sel] @ coef), 1e-300)
                full[sel] = coef
            else:
                sigma2 = max(base_var, 1e-300)
            ll = -0.5 * w_total * (np.log(2.0 * np.pi * sigma2) + 1.0)
            refit_cache[support] = (ll, full)
        refit_ll[i], refit_coefs[i] = refit_cache[support]
    fam = GlmFamily.gaussian()
    return LassoPath(fam, grid, intercepts, thetas, loglik, df, refit_ll, refit_coefs)


def _soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def _logistic_kkt(X, y, wn, alpha, theta, lam):
    eta = alpha + X @ theta
    mu = _expit(eta)
    resid = wn * (y - mu)
    grad0 = float(resid.sum())
    grad = X.T @ resid
    active = theta != 0.0
    viol = abs(grad0)
    if active.any():
        viol = max(viol, float(np.abs(grad[active] - lam * np.sign(theta[active])).max()))
    if (~active).any():
        viol = max(viol, float(np.maximum(np.abs(grad[~active]) - lam, 0.0).max()))
    return viol, grad0, grad


def _fit_logistic(X, y, w, grid, family, coef_tol, kkt_tol, max_sweeps):
    n, p = X.shape
    w_total = float(w.sum())
    wn = w / w_total
    ybar = min(max(float(wn @ y), _PROB_CLIP), 1.0 - _PROB_CLIP)
    if grid is None:
        score0 = X.T @ (wn * (y - ybar))
        grid = default_lambda_grid(np.abs(score0).max())
    alpha = float(np.log(ybar / (1.0 - ybar)))
    theta = np.zeros(p)
    k = len(grid)
    intercepts = np.empty(k)
    coefs = np.empty((k, p))
    loglik = np.empty(k)
    refit_ll = np.empty(k)
    refit_coefs = np.zeros((k, p))
    df = np.empty(k, dtype=np.int64)
    lam_eps = max(1e-4 * float(grid[0]), 1e-10)
    refit_cache: dict[tuple, tuple] = {}
    for i, lam in enumerate(grid):
        alpha, theta = _logistic_solve(
            X, y, wn, alpha, theta, lam, coef_tol, kkt_tol, max_sweeps
        )
        intercepts[i] = alpha
        coefs[i] = theta
        loglik[i] = _binomial_loglik(y, alpha + X @ theta, w)
        df[i] = int(np.count_nonzero(theta))
        support = tuple(np.flatnonzero(theta).tolist())
        if support not in refit_cache:
            full = np.zeros(p)
            if support:
                sub = np.ascontiguousarray(X[:, list(support)])
                a_r, t_r = _logistic_solve(
                    sub, y, wn, float(np.log(ybar / (1 - ybar))), np.zeros(len(support)),
                    lam_eps, coef_tol, 1e-4, max_sweeps,
                )
                ll = _binomial_loglik(y, a_r + sub @ t_r, w)
                full[list(support)] = t_r
            else:
                ll = _binomial_loglik(y, np.full(n, np.log(ybar / (1 - ybar))), w)
            refit_cache[support] = (ll, full)
        refit_ll[i], refit_coefs[i] = refit_cache[support]
    return LassoPath(family, grid, intercepts, coefs, loglik, df, refit_ll, refit_coefs)


def _logistic_solve(X, y, wn, alpha, theta, lam, coef_tol, kkt_tol, max_sweeps, max_outer=200):
    target = 0.5 * kkt_tol
    theta = theta.copy()
    for _ in range(max_outer):
        viol, _, _ = _logistic_kkt(X, y, wn, alpha, theta, lam)
        if viol <= target:
            return alpha, theta
        eta = np.clip(alpha + X @ theta, -_ETA_CLIP, _ETA_CLIP)
        mu = _expit(eta)
        v = np.maximum(mu * (1.0 - mu), _VAR_FLOOR)
        om = wn * v
        z = eta + (y - mu) / v
        sw = float(om.sum())
        xm = (om @ X) / sw
        zm = float(om @ z) / sw
        Xc = X - xm
        G = Xc.T @ (om[:, None] * Xc)
        b = Xc.T @ (om * (z - zm))
        old_alpha, old_theta = alpha, theta.copy()
        wls_lasso(G, b, theta, lam, max(coef_tol * 1e-2, 1e-12), 1e-9, max_sweeps)
        alpha = zm - float(xm @ theta)
        step = max(abs(alpha - old_alpha), float(np.abs(theta - old_theta).max(initial=0.0)))
        if step < 1e-12:
            break
    alpha, theta, viol = _ista_polish(X, y, wn, alpha, theta, lam, target, kind=BINOMIAL)
    if viol > kkt_tol:
        raise NonConvergenceError(
            f"logistic lasso did not reach KKT tolerance at lambda={lam:.6g}",
            achieved_tolerance=viol,
        )
    return alpha, theta


def _ista_polish(X, y, wn, alpha, theta, lam, target, kind, max_iter=5000):
    """Proximal-gradient cleanup on the exact objective.

    IRLS with a working-weight floor can stall slightly off the true optimum
    when fitted probabilities pin near 0/1; plain ISTA steps have the exact
    subgradient fixed point.
    """
    aug = np.column_stack([np.ones(len(X)), X])
    gram = aug.T @ (wn[:, None] * aug)
    lip_base = float(np.linalg.eigvalsh(gram).max())
    curv = 0.25 if kind == BINOMIAL else 0.5
    step = 0.95 / max(curv * lip_base, 1e-12)
    multi = theta.ndim == 2
    for _ in range(max_iter):
        if multi:
            mu = _softmax(alpha[None, :] + X @ theta)
            resid = wn[:, None] * (y - mu)
            grad0 = resid.sum(axis=0)
            grad = X.T @ resid
            viol = _subgradient_violation(grad0, grad, theta, lam)
            if viol <= target:
                return alpha, theta, viol
            alpha = alpha + step * grad0
            theta = _soft(theta + step * grad, step * lam)
        else:
            viol, grad0, grad = _logistic_kkt(X, y, wn, alpha, theta, lam)
            if viol <= target:
                return alpha, theta, viol
            alpha = alpha + step * grad0
            theta = _soft(theta + step * grad, step * lam)
    if multi:
        mu = _softmax(alpha[None, :] + X @ theta)
        resid = wn[:, None] * (y - mu)
        viol = _subgradient_violation(resid.sum(axis=0), X.T @ resid, theta, lam)
    else:
        viol, _, _ = _logistic_kkt(X, y, wn, alpha, theta, lam)
    return alpha, theta, viol


def _subgradient_violation(grad0, grad, theta, lam):
    viol = float(np.abs(grad0).max())
    active = theta != 0.0
    if active.any():
        viol = max(viol, float(np.abs(grad[active] - lam * np.sign(theta[active])).max()))
    if (~active).any():
        viol = max(viol, float(np.maximum(np.abs(grad[~active]) - lam, 0.0).max()))
    return viol


def _fit_multinomial(X, y, w, grid, family, coef_tol, kkt_tol, max_sweeps):
    n, p = X.shape
    L = family.n_classes
    w_total = float(w.sum())
    wn = w / w_total
    y_hot = _one_hot(y, L)
    pbar = np.clip(wn @ y_hot, _PROB_CLIP, 1.0 - _PROB_CLIP)
    if grid is None:
        score0 = X.T @ (wn[:, None] * (y_hot - pbar))
        grid = default_lambda_grid(np.abs(score0).max())
    alpha = np.log(pbar)
    alpha -= alpha.mean()
    theta = np.zeros((p, L))
    k = len(grid)
    intercepts = np.empty((k, L))
    coefs = np.empty((k, p, L))
    loglik = np.empty(k)
    df = np.empty(k, dtype=np.int64)
    lam_eps = max(1e-4 * float(grid[0]), 1e-10)
    refit_ll = np.empty(k)
    refit_coefs = np.zeros((k, p, L))
    refit_cache: dict[tuple, tuple] = {}
    alpha0 = np.log(pbar) - np.log(pbar).mean()
    for i, lam in enumerate(grid):
        alpha, theta = _multinomial_solve(
            X, y_hot, wn, alpha, theta, lam, coef_tol, kkt_tol, max_sweeps
        )
        intercepts[i] = alpha
        coefs[i] = theta
        loglik[i] = _multinomial_loglik(y_hot, alpha[None, :] + X @ theta, w)
        df[i] = int((np.abs(theta) > 0).any(axis=1).sum())
        support = tuple(np.flatnonzero((np.abs(theta) > 0).any(axis=1)).tolist())
        if support not in refit_cache:
            full = np.zeros((p, L))
            if support:
                sub = np.ascontiguousarray(X[:, list(support)])
                a_r, t_r = _multinomial_solve(
                    sub, y_hot, wn, alpha0.copy(), np.zeros((len(support), L)),
                    lam_eps, coef_tol, 1e-4, max_sweeps,
                )
                ll = _multinomial_loglik(y_hot, a_r[None, :] + sub @ t_r, w)
                full[list(support), :] = t_r
            else:
                ll = _multinomial_loglik(y_hot, np.broadcast_to(alpha0, (n, L)), w)
            refit_cache[support] = (ll, full)
        refit_ll[i], refit_coefs[i] = refit_cache[support]
    return LassoPath(family, grid, intercepts, coefs, loglik, df, refit_ll, refit_coefs)


def _multinomial_solve(X, y_hot, wn, alpha, theta, lam, coef_tol, kkt_tol, max_sweeps, max_outer=200):
    target = 0.5 * kkt_tol
    L = y_hot.shape[1]
    alpha = alpha.copy()
    theta = theta.copy()
    for _ in range(max_outer):
        mu = _softmax(alpha[None, :] + X @ theta)
        resid = wn[:, None] * (y_hot - mu)
        viol = _subgradient_violation(resid.sum(axis=0), X.T @ resid, theta, lam)
        if viol <= target:
            return alpha, theta
        biggest = 0.0
        for c in range(L):
            eta = np.clip(alpha[None, :] + X @ theta, -_ETA_CLIP, _ETA_CLIP)
            mu = _softmax(eta)
            v = np.maximum(mu[:, c] * (1.0 - mu[:, c]), _VAR_FLOOR)
            om = wn * v
            z = eta[:, c] + (y_hot[:, c] - mu[:, c]) / v
            sw = float(om.sum())
            xm = (om @ X) / sw
            zm = float(om @ z) / sw
            Xc = X - xm
            G = Xc.T @ (om[:, None] * Xc)
            b = Xc.T @ (om * (z - zm))
            th_c = np.ascontiguousarray(theta[:, c])
            old_alpha = alpha[c]
            old = th_c.copy()
            wls_lasso(G, b, th_c, lam, max(coef_tol * 1e-2, 1e-12), 1e-9, max_sweeps)
            theta[:, c] = th_c
            alpha[c] = zm - float(xm @ th_c)
            biggest = max(
                biggest, abs(alpha[c] - old_alpha), float(np.abs(th_c - old).max(initial=0.0))
            )
        alpha -= alpha.mean()
        if biggest < 1e-12:
            break
    alpha, theta, viol = _ista_polish(X, y_hot, wn, alpha, theta, lam, target, kind=MULTINOMIAL)
    if viol > kkt_tol:
        raise NonConvergenceError(
            f"multinomial lasso did not reach KKT tolerance at lambda={lam:.6g}",
            achieved_tolerance=viol,
        )
    return alpha, theta


def select_ebic(path: LassoPath, n: int, p: int, gamma: float = EBIC_GAMMA) -> int:
    """Index of the EBIC-optimal grid point; ties go to the larger lambda.

    EBIC(lam) = -2 loglik + df log(n) + 2 gamma df log(p), with the
    likelihood of the unpenalized refit on each support, so the criterion
    compares supports rather than shrinkage levels.
    """
    if len(path) == 0:
        raise ValueError("empty path")
    ebic = ebic_values(path, n, p, gamma)
    best = 0
    for i in range(1, len(path)):
        if ebic[i] < ebic[best]:
            best = i
    return best


def ebic_values(path: LassoPath, n: int, p: int, gamma: float = EBIC_GAMMA) -> np.ndarray:
    log_p = np.log(max(p, 1))
    return -2.0 * path.refit_log_likelihoods + path.df * (np.log(n) + 2.0 * gamma * log_p)


def kkt_violation(X, y, family: GlmFamily, case_weights, lam, intercept, coefficients) -> float:
    """Worst subgradient violation of the penalized objective at a point.

    Zero (up to tolerance) certifies optimality: unpenalized directions have
    vanishing score, active slopes have score equal to lam times their sign,
    inactive slopes have absolute score at most lam.
    """
    X, y, w = _validate_inputs(X, y, family, case_weights)
    wn = w / float(w.sum())
    theta = np.asarray(coefficients, dtype=np.float64)
    if family.tag == GAUSSIAN:
        resid = wn * (y - (intercept + X @ theta))
        return _subgradient_violation(np.array([resid.sum()]), X.T @ resid, theta, lam)
    if family.tag == BINOMIAL:
        viol, _, _ = _logistic_kkt(X, y, wn, float(intercept), theta, lam)
        return viol
    y_hot = _one_hot(y, family.n_classes)
    mu = _softmax(np.asarray(intercept)[None, :] + X @ theta)
    resid = wn[:, None] * (y_hot - mu)
    return _subgradient_violation(resid.sum(axis=0), X.T @ resid, theta, lam)


def penalized_objective(X, y, family: GlmFamily, case_weights, lam, intercept, coefficients) -> float:
    """Value of the fitted objective at an arbitrary point (test oracle hook)."""
    X, y, w = _validate_inputs(X, y, family, case_weights)
    w_total = float(w.sum())
    theta = np.asarray(coefficients, dtype=np.float64)
    if family.tag == GAUSSIAN:
        eta = intercept + X @ theta
        resid = y - eta
        smooth = 0.5 * float((w / w_total) @ (resid * resid))
    elif family.tag == BINOMIAL:
        smooth = -_binomial_loglik(y, intercept + X @ theta, w) / w_total
    else:
        y_hot = _one_hot(y, family.n_classes)
        smooth = -_multinomial_loglik(y_hot, np.asarray(intercept)[None, :] + X @ theta, w) / w_total
    return smooth + lam * float(np.abs(theta).sum())
