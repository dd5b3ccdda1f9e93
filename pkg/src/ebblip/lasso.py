"""Adaptive lasso feature pruning.

Minimizes ``||y - X w||^2 + lam * sum_j zeta_j |w_j|`` with
``zeta_j = 1 / |w_ridge_j| ** gamma``. The weighted problem is solved as a
plain lasso on the rescaled design ``X_j / zeta_j`` by cyclic coordinate
descent on the Gram matrix. The shrinkage ``lam`` is chosen by stratified
k-fold cross validation on mean squared error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numba import njit

__all__ = [
    "AdaptiveLassoResult",
    "LassoConfig",
    "adaptive_lasso_prune",
    "lasso_coordinate_descent",
    "soft_threshold",
    "stratified_folds",
]


@dataclass(frozen=True)
class LassoConfig:
    lambda_grid: tuple[float, ...] | None = None
    cv_folds: int = 5
    gamma: float = 1.0
    ridge_penalty: float = 1.0
    n_lambda: int = 30
    lambda_min_ratio: float = 1e-4
    seed: int = 0
    tol: float = 1e-6
    patience: int | None = 3
    max_sweeps: int = 100_000

    def __post_init__(self):
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.ridge_penalty < 0:
            raise ValueError("ridge_penalty must be >= 0")
        if self.lambda_grid is not None and min(self.lambda_grid) < 0:
            raise ValueError("lambda values must be >= 0")


def soft_threshold(z, thresh):
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


@njit(cache=True)
def _cd_gram(G, c, lam, w, tol, max_sweeps):
    p = c.shape[0]
    Gw = G @ w
    half = 0.5 * lam
    for sweep in range(max_sweeps):
        max_step = 0.0
        max_w = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                new = 0.0
            else:
                rho = c[j] - Gw[j] + gjj * w[j]
                if rho > half:
                    new = (rho - half) / gjj
                elif rho < -half:
                    new = (rho + half) / gjj
                else:
                    new = 0.0
            delta = new - w[j]
            if delta != 0.0:
                for k in range(p):
                    Gw[k] += delta * G[k, j]
                w[j] = new
                if abs(delta) > max_step:
                    max_step = abs(delta)
            if abs(new) > max_w:
                max_w = abs(new)
        if max_step <= tol * max(1.0, max_w):
            return sweep + 1
    return -1


def _gram(X, y):
    if sp.issparse(X):
        G = np.asarray((X.T @ X).todense(), dtype=float)
    else:
        G = X.T @ X
    return np.ascontiguousarray(G, dtype=float), np.asarray(X.T @ y, dtype=float).ravel()


def _solve(G, c, lam, w0, tol, max_sweeps):
    w = np.array(w0, dtype=float)
    sweeps = _cd_gram(G, c, float(lam), w, tol, max_sweeps)
    if sweeps < 0:
        raise RuntimeError(f"coordinate descent did not converge in {max_sweeps} sweeps")
    return w


def lasso_coordinate_descent(X, y, lam: float, *, tol: float = 1e-12,
                             max_sweeps: int = 100_000, warm_start=None) -> np.ndarray:
    """Minimize ``||y - X w||^2 + lam * ||w||_1`` by cyclic coordinate descent."""
    G, c = _gram(X, np.asarray(y, dtype=float))
    w0 = np.zeros(c.size) if warm_start is None else warm_start
    return _solve(G, c, lam, w0, tol, max_sweeps)


def stratified_folds(y, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per row; each label is spread evenly across folds."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    start = 0
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (start + np.arange(idx.size)) % k
        start += idx.size
    return folds


@dataclass
class AdaptiveLassoResult:
    retained: np.ndarray
    coef: np.ndarray
    lambda_: float
    lambda_grid: np.ndarray
    cv_mse: np.ndarray
    ridge_coef: np.ndarray


def adaptive_lasso_prune(X, y, config: LassoConfig = LassoConfig(), *, categories=None,
                         protect: Iterable[str] = (), folds=None) -> AdaptiveLassoResult:
    """Select features by adaptive lasso with a cross-validated shrinkage.

    Parameters
    ----------
    X : array_like or sparse matrix, shape (n, p)
    y : array_like, shape (n,)
        Response, typically labels in ``{-1, +1}`` fit by least squares.
    categories : array_like of str, optional
        Category of each column, needed when ``protect`` is non-empty.
    protect : iterable of str
        Categories whose columns are always retained.
    folds : array_like of int, optional
        Explicit fold id per row; stratified random folds otherwise.

    Returns
    -------
    AdaptiveLassoResult
        ``retained`` holds sorted column indices with a nonzero coefficient
        at the selected shrinkage, plus every protected column.
    """
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.size != n:
        raise ValueError(f"design has {n} rows but {y.size} labels were given")
    protect = set(protect)
    if protect and categories is None:
        raise ValueError("categories are required to protect feature groups")

    G, c = _gram(X, y)
    live = np.flatnonzero(np.diag(G) > 0)
    ridge = np.zeros(p)
    if live.size:
        A = G[np.ix_(live, live)] + config.ridge_penalty * np.eye(live.size)
        try:
            ridge[live] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), c[live])
        except np.linalg.LinAlgError:
            raise ValueError(
                "ridge system is singular; increase ridge_penalty "
                f"(currently {config.ridge_penalty})") from None
    with np.errstate(divide="ignore"):
        zeta = 1.0 / np.abs(ridge) ** config.gamma
    # columns with zeta = inf (all-zero or zero ridge estimate) are fixed at 0
    act = live[np.isfinite(zeta[live])]
    scale = 1.0 / zeta[act]

    def rescaled(Gm, cm):
        return np.ascontiguousarray(Gm[np.ix_(act, act)] * np.outer(scale, scale)), cm[act] * scale

    Gs, cs = rescaled(G, c)
    if config.lambda_grid is not None:
        grid = np.sort(np.asarray(config.lambda_grid, dtype=float))[::-1]
    else:
        lam_max = 2.0 * np.max(np.abs(cs)) if cs.size else 1.0
        grid = np.geomspace(lam_max, lam_max * config.lambda_min_ratio, config.n_lambda)

    if folds is None:
        folds = stratified_folds(y, config.cv_folds, config.seed)
    folds = np.asarray(folds)
    Xc = sp.csr_matrix(X) if sp.issparse(X) else np.asarray(X, dtype=float)
    fold_ids = np.unique(folds)
    systems = []
    for f in fold_ids:
        test = folds == f
        Gt, ct = rescaled(*_gram(Xc[~test], y[~test]))
        systems.append((Gt, ct, Xc[test][:, act], y[test], np.zeros(act.size)))
    # the path stops once the CV error has not improved for ``patience`` steps;
    # shrinkages never reached keep an infinite error
    mean_mse = np.full(grid.size, np.inf)
    since_best = 0
    for li, lam in enumerate(grid):
        err = 0.0
        for Gt, ct, Xtest, ytest, u in systems:
            u[:] = _solve(Gt, ct, lam, u, config.tol, config.max_sweeps)
            err += np.mean((ytest - Xtest @ (u * scale)) ** 2)
        mean_mse[li] = err / len(systems)
        since_best = 0 if mean_mse[li] <= mean_mse[:li + 1].min() else since_best + 1
        if config.patience is not None and since_best >= config.patience:
            break
    # first minimum on a descending grid favours the sparser model on ties
    best = int(np.argmin(mean_mse))
    u = np.zeros(act.size)
    for lam in grid[: best + 1]:
        u = _solve(Gs, cs, lam, u, config.tol, config.max_sweeps)
    coef = np.zeros(p)
    coef[act] = u * scale
    keep = coef != 0
    if protect:
        cats = np.asarray(categories, dtype=object)
        keep |= np.isin(cats, list(protect))
    return AdaptiveLassoResult(np.flatnonzero(keep), coef, float(grid[best]), grid, mean_mse, ridge)
