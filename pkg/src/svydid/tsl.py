"""Design-based variance from linearized values, regression sandwiches, t intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special

from svydid import _kernels
from svydid.design import SurveyDesign, design_df

__all__ = [
    "LinearizedSample",
    "VarianceResult",
    "VarianceError",
    "tsl_variance",
    "regression_sandwich",
    "hc1_variance",
    "cluster_only_variance",
    "t_quantile",
    "t_interval",
]

MODES = ("hc1", "cluster", "design", "replicate")


class VarianceError(ValueError):
    """Variance cannot be computed from the supplied inputs."""


@dataclass(frozen=True, eq=False)
class LinearizedSample:
    """Per-observation linearized values paired with a design.

    ``psi`` has shape ``(n, k)``: one column per target parameter. For a
    weighted estimator ``psi_i = w_i IF_i / W_hat``, which is the first-order
    change in the estimate per unit relative change in observation ``i``'s
    weight.
    """

    psi: np.ndarray
    design: SurveyDesign
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        if psi.ndim == 1:
            psi = psi[:, None]
        if psi.shape[0] != self.design.n:
            raise VarianceError(
                f"psi has {psi.shape[0]} rows but the design has {self.design.n} observations"
            )
        psi = np.array(psi, copy=True)
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def k(self) -> int:
        return int(self.psi.shape[1])


@dataclass(frozen=True, eq=False)
class VarianceResult:
    """Variance matrix with its degrees of freedom and inference mode."""

    vcov: np.ndarray
    df: int
    mode: str
    per_stratum: Optional[np.ndarray] = None
    condition: Optional[float] = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vcov, dtype=float))
        v = 0.5 * (v + v.T)
        v.setflags(write=False)
        object.__setattr__(self, "vcov", v)
        if self.mode not in MODES:
            raise ValueError(f"unknown inference mode {self.mode!r}")

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def variance(self) -> float:
        """Scalar variance (first parameter)."""
        return float(self.vcov[0, 0])


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise VarianceError(f"{what} has a non-finite value at index {tuple(int(i) for i in bad)}")


def _meat(scores, design: SurveyDesign):
    """Stratified between-PSU covariance of row scores (k columns)."""
    design.check_variance_ready()
    totals = _kernels.group_sum(scores, design.psu, design.n_psu)
    n_h = design.psus_per_stratum.astype(float)
    factor = (1.0 - design.fpc) * n_h / (n_h - 1.0)
    total, per = _kernels.stratified_meat(totals, design.psu_stratum, factor, design.n_strata)
    return total, per


def tsl_variance(lin: LinearizedSample, design: Optional[SurveyDesign] = None, mode: str = "design") -> VarianceResult:
    """Stratified-cluster linearization variance.

    PSU totals of ``psi`` are centred within stratum; the squared deviations
    are scaled by ``(1 - f_h) n_h / (n_h - 1)`` and summed over strata. With
    several columns the squares become outer products.
    """
    design = lin.design if design is None else design
    if design.n != lin.psi.shape[0]:
        raise VarianceError("design and linearized sample have different lengths")
    _check_finite(lin.psi, "psi")
    total, per = _meat(lin.psi, design)
    return VarianceResult(total, design_df(design), mode, per_stratum=per)


def cluster_only_variance(lin: LinearizedSample, psu=None) -> VarianceResult:
    """One implicit stratum, no FPC, clusters from ``psu`` (or the sample's PSUs)."""
    if psu is None:
        design = lin.design.cluster_only()
    else:
        design = SurveyDesign.cluster(psu, weights=lin.design.weights)
    if design.n_psu < 2:
        raise VarianceError("cluster-robust variance needs at least two PSUs")
    return tsl_variance(lin, design, mode="cluster")


def _bread(X, w):
    xtwx = X.T @ (X * w[:, None])
    # relative conditioning via the symmetric eigenvalues
    ev = np.linalg.eigvalsh(xtwx)
    if ev.size == 0 or ev[-1] <= 0:
        raise VarianceError("bread matrix is zero")
    rcond = ev[0] / ev[-1]
    if rcond < 1e-12:
        rank = int(np.sum(ev > ev[-1] * 1e-12))
        raise VarianceError(
            f"bread matrix is numerically singular (rank {rank} of {xtwx.shape[0]}, reciprocal condition {rcond:.3g})"
        )
    return np.linalg.inv(xtwx), 1.0 / rcond


def regression_sandwich(X, residuals, weights, design: SurveyDesign, mode: str = "design") -> VarianceResult:
    """Stratified-cluster sandwich for WLS coefficients.

    Bread ``(X'WX)^-1``; meat from PSU totals of ``w_i x_i u_i`` combined
    exactly as in :func:`tsl_variance`.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    u = np.asarray(residuals, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if not (X.shape[0] == u.size == w.size == design.n):
        raise VarianceError("X, residuals, weights and design must have matching rows")
    _check_finite(X, "X")
    _check_finite(u, "residuals")
    bread, cond = _bread(X, w)
    meat, per = _meat(X * (w * u)[:, None], design)
    V = bread @ meat @ bread
    per_b = np.einsum("ab,hbc,cd->had", bread, per, bread)
    return VarianceResult(V, design_df(design), mode, per_stratum=per_b, condition=cond)


def hc1_variance(X, residuals) -> VarianceResult:
    """Unweighted heteroskedasticity-robust variance with the n/(n-k) factor."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    u = np.asarray(residuals, dtype=float).ravel()
    n, k = X.shape
    if n <= k:
        raise VarianceError(f"HC1 needs more observations than regressors (n={n}, k={k})")
    bread, cond = _bread(X, np.ones(n))
    xu = X * u[:, None]
    V = bread @ (xu.T @ xu) @ bread * (n / (n - k))
    return VarianceResult(V, n - k, "hc1", condition=cond)


# --------------------------------------------------------------------- t

def t_quantile(p: float, df: float) -> float:
    """Quantile of Student's t.

    Obtained by inverting the regularized incomplete beta function,
    ``P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)``.
    """
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie strictly between 0 and 1")
    if not (df > 0) or not np.isfinite(df):
        raise ValueError("df must be positive and finite")
    if p == 0.5:
        return 0.0
    tail = 2.0 * min(p, 1.0 - p)
    x = float(special.betaincinv(0.5 * df, 0.5, tail))
    if x <= 0.0:
        return float("inf") if p > 0.5 else float("-inf")
    t = float(np.sqrt(df * (1.0 - x) / x))
    return t if p > 0.5 else -t


def t_interval(est, se, df, level: float = 0.95):
    """Two-sided ``level`` interval ``est +/- t_{df} se``; arrays broadcast."""
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    if df is None or df < 1:
        raise ValueError("df must be at least 1")
    se_arr = np.asarray(se, dtype=float)
    if np.any(se_arr < 0):
        raise ValueError("standard errors must be nonnegative")
    q = t_quantile(1.0 - (1.0 - level) / 2.0, float(df))
    est_arr = np.asarray(est, dtype=float)
    lo, hi = est_arr - q * se_arr, est_arr + q * se_arr
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi
