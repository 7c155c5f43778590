"""L1-regularised linear regression by cyclic coordinate descent.

Minimises ``(1/2n) ||y - X w - b||^2 + lam * ||w||_1`` with an unpenalised
intercept ``b``.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from . import rng
from .errors import InvalidInput

log = logging.getLogger(__name__)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def objective(X, y, w, b, lam):
    r = y - X @ w - b
    return float(r @ r / (2 * len(y)) + lam * np.abs(w).sum())


def lambda_max(X, y):
    """Smallest lam for which every coefficient is exactly zero."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / len(y))


@dataclass
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    sweeps: int
    converged: bool
    objective_history: list = field(default_factory=list, repr=False)
    cv_errors: dict = field(default=None, repr=False)

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept


def coordinate_descent(X, y, lam, tol=1e-7, max_sweeps=10_000, w0=None, track=True):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if lam < 0:
        raise InvalidInput("lambda must be >= 0")
    col_sq = (X * X).sum(axis=0) / n
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=np.float64)
    b = float(np.mean(y - X @ w))
    r = y - X @ w - b
    history = [objective(X, y, w, b, lam)] if track else []
    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = w[j]
            rho = X[:, j] @ r / n + col_sq[j] * old
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                r -= X[:, j] * (new - old)
                w[j] = new
                max_change = max(max_change, abs(new - old))
        db = r.mean()
        b += db
        r -= db
        max_change = max(max_change, abs(db))
        if track:
            history.append(objective(X, y, w, b, lam))
        if max_change < tol:
            converged = True
            break
    if not converged:
        log.warning("lasso did not converge in %d sweeps (lam=%g)", max_sweeps, lam)
    return LassoFit(w, b, lam, sweep, converged, history)


def lasso_fit(X, y, lam=None, tol=1e-7, max_sweeps=10_000, n_folds=5, n_grid=30, seed=0):
    """Fit a LASSO model; ``lam=None`` picks lam by k-fold cross-validation.

    The grid is log-spaced from lambda_max down to 1e-3 * lambda_max.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidInput("X must be (n, p) with n matching len(y)")
    if lam is not None:
        return coordinate_descent(X, y, lam, tol, max_sweeps)

    lmax = lambda_max(X, y)
    if lmax == 0.0:
        return coordinate_descent(X, y, 0.0, tol, max_sweeps)
    grid = lmax * np.logspace(0, -3, n_grid)
    folds = rng.generator(seed, rng.CV).permutation(len(y)) % n_folds
    errors = np.zeros(n_grid)
    for k in range(n_folds):
        tr, va = folds != k, folds == k
        w = None
        # warm start along the path
        for g, lam_g in enumerate(grid):
            fit = coordinate_descent(X[tr], y[tr], lam_g, tol=max(tol, 1e-6), max_sweeps=max_sweeps,
                                     w0=w, track=False)
            w = fit.coef
            resid = y[va] - fit.predict(X[va])
            errors[g] += resid @ resid
    errors /= len(y)
    best = int(np.argmin(errors))
    fit = coordinate_descent(X, y, grid[best], tol, max_sweeps)
    fit.cv_errors = {float(l): float(e) for l, e in zip(grid, errors)}
    return fit
