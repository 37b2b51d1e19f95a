"""Weighted least squares, fixed-effect demeaning and weighted logistic regression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from svydid import _kernels

__all__ = [
    "RegressionError",
    "SeparationError",
    "WlsFit",
    "LogitFit",
    "wls",
    "demean_within",
    "demean_two_way",
    "logit_irls",
]

# Relative size of a column's component orthogonal to the earlier kept
# columns below which it counts as collinear.
COLLINEAR_TOL = 1e-10


class RegressionError(ValueError):
    """The regression problem is ill-posed."""


class SeparationError(RegressionError):
    """Logistic regression coefficients diverge (perfect or quasi separation)."""


@dataclass(frozen=True, eq=False)
class WlsFit:
    """Result of :func:`wls`.

    ``coef`` and ``bread`` refer to the kept columns only; ``coef_full``
    places them back in the original column order with NaN for dropped ones.
    """

    coef: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    bread: np.ndarray
    weights: np.ndarray
    kept: np.ndarray
    dropped: Tuple[str, ...]
    names: Tuple[str, ...]
    X: np.ndarray = field(repr=False)

    @property
    def coef_full(self) -> np.ndarray:
        out = np.full(len(self.names), np.nan)
        out[self.kept] = self.coef
        return out

    @property
    def kept_names(self) -> Tuple[str, ...]:
        return tuple(self.names[j] for j in self.kept)

    def coef_of(self, name: str) -> float:
        return float(self.coef_full[self.names.index(name)])


@dataclass(frozen=True, eq=False)
class LogitFit:
    coef: np.ndarray
    prob: np.ndarray
    converged: bool
    iterations: int
    hessian: np.ndarray
    max_score: float


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _independent_columns(Xs, tol=COLLINEAR_TOL):
    """Indices of columns kept when scanning left to right.

    A column is dropped when its part orthogonal to all earlier kept
    columns is below ``tol`` times its own norm.
    """
    norms = np.linalg.norm(Xs, axis=0)
    kept = []
    Q = np.empty((Xs.shape[0], 0))
    for j in range(Xs.shape[1]):
        if norms[j] == 0:
            continue
        v = Xs[:, j] - Q @ (Q.T @ Xs[:, j])
        v = v - Q @ (Q.T @ v)  # second pass keeps Q orthogonal
        r = np.linalg.norm(v)
        if r > tol * norms[j]:
            kept.append(j)
            Q = np.column_stack([Q, v / r])
    return np.array(kept, dtype=np.int64)


def wls(X, y, w=None, names: Optional[Sequence[str]] = None) -> WlsFit:
    """Weighted least squares with deterministic collinearity dropping.

    Columns are scanned in order and a column that is (numerically) a linear
    combination of earlier kept columns is dropped; the first of any
    collinear set survives. The solve is a least-squares QR on
    ``sqrt(w) X``.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    n, k = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float).ravel()
    if y.size != n or w.size != n:
        raise RegressionError("X, y and w must have the same number of rows")
    if np.any(w < 0):
        raise RegressionError("weights must be nonnegative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise RegressionError("non-finite values in regression input")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(k))
    sw = np.sqrt(w)
    Xs = X * sw[:, None]
    kept = _independent_columns(Xs)
    if kept.size == 0:
        raise RegressionError("design matrix has rank 0")
    Xk = Xs[:, kept]
    coef, *_ = np.linalg.lstsq(Xk, y * sw, rcond=None)
    fitted = X[:, kept] @ coef
    xtwx = Xk.T @ Xk
    bread = np.linalg.inv(xtwx)
    dropped = tuple(names[j] for j in range(k) if j not in set(kept.tolist()))
    return WlsFit(
        coef=coef,
        residuals=y - fitted,
        fitted=fitted,
        bread=bread,
        weights=w,
        kept=kept,
        dropped=dropped,
        names=names,
        X=X,
    )


def demean_within(x, groups, w=None):
    """Subtract weighted group means from each column of ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float).ravel()
    codes, n_groups = _group_codes(groups)
    return _kernels.demean_one_way(x, codes, w, n_groups)


def _group_codes(groups):
    uniq, codes = np.unique(np.asarray(groups), return_inverse=True)
    return codes.ravel().astype(np.int64), int(uniq.size)


def demean_two_way(x, groups1, groups2, w=None, tol: float = 1e-10, max_iter: int = 10_000):
    """Weighted within transformation for two crossed factors.

    Alternates one-way demeaning by ``groups1`` and ``groups2`` until the
    largest second-factor correction falls below ``tol`` times the largest
    absolute input value. Returns the demeaned array.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float).ravel()
    c1, n1 = _group_codes(groups1)
    c2, n2 = _group_codes(groups2)
    scale = max(1.0, float(np.abs(x).max())) if x.size else 1.0
    out, it, delta = _kernels.demean_two_way(x, c1, n1, c2, n2, w, tol=tol * scale, max_iter=max_iter)
    if delta > tol * scale:
        raise RegressionError(f"two-way demeaning did not converge in {it} sweeps (last correction {delta:.3g})")
    return out


def _deviance(D, p, w):
    p = np.clip(p, 1e-300, 1.0)
    q = np.clip(1.0 - p, 1e-300, 1.0)
    return -2.0 * float(np.sum(w * (D * np.log(p) + (1.0 - D) * np.log(q))))


def logit_irls(X, D, w=None, tol: float = 1e-8, max_iter: int = 100) -> LogitFit:
    """Weighted logistic regression by Newton/IRLS with step halving.

    Convergence: the largest absolute weighted score, divided by the weight
    total, at most ``tol``. Probabilities are never clipped here.

    Raises
    ------
    SeparationError
        If the coefficient norm exceeds 1e4, or if correctly classified
        observations end with linear predictors beyond +/-30.
    """
    X = _as_2d(X)
    D = np.asarray(D, dtype=float).ravel()
    n, k = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float).ravel()
    if not np.all((D == 0) | (D == 1)):
        raise RegressionError("logit outcome must be 0/1")
    wpos = w > 0
    if not (np.any(D[wpos] == 1) and np.any(D[wpos] == 0)):
        raise RegressionError("logit outcome has a single class")
    scale = float(w.sum())
    beta = np.zeros(k)
    eta = X @ beta
    p = expit(eta)
    dev = _deviance(D, p, w)
    converged = False
    it = 0
    H = np.eye(k)
    score = X.T @ (w * (D - p))
    for it in range(1, max_iter + 1):
        H = X.T @ (X * (w * p * (1.0 - p))[:, None])
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            p_c = expit(X @ cand)
            dev_c = _deviance(D, p_c, w)
            if dev_c <= dev + 1e-12 * max(1.0, abs(dev)) or t < 1e-10:
                break
            t *= 0.5
        beta, p, dev = cand, p_c, dev_c
        if np.linalg.norm(beta) > 1e4:
            raise SeparationError(
                "logistic coefficients diverge (norm > 1e4): the classes are perfectly or quasi-separated"
            )
        score = X.T @ (w * (D - p))
        if np.max(np.abs(score)) / scale <= tol:
            converged = True
            break
    eta = X @ beta
    # The weighted score vanishes along a separating direction, so a
    # "converged" fit can still be separated: flag linear predictors past
    # +/-30 on observations the fit already classifies correctly.
    runaway = wpos & (np.abs(eta) > 30) & ((eta > 0) == (D == 1))
    if np.any(runaway):
        raise SeparationError(
            f"fitted probabilities reach 0 or 1 for {int(runaway.sum())} observation(s): "
            "the classes are perfectly or quasi-separated"
        )
    H = X.T @ (X * (w * p * (1.0 - p))[:, None])
    return LogitFit(
        coef=beta,
        prob=p,
        converged=converged,
        iterations=it,
        hessian=H,
        max_score=float(np.max(np.abs(score)) / scale),
    )
