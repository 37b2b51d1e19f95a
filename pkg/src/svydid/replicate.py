"""Replicate-weight variance (BRR, Fay, JK1, JKn, SDR).

All methods share one formula, ``V = c * sum_r s_r (theta_r - theta_center)^2``,
and differ only in the factor ``c`` and the per-replicate scales ``s_r``.
Replicate estimates come either from refitting under each replicate weight
column or from the first-order shortcut that reweights stored linearized
values.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from svydid.design import DesignError, SingletonStratumError, SurveyDesign
from svydid.tsl import VarianceError, VarianceResult

__all__ = [
    "METHODS",
    "ReplicateWeights",
    "ReplicateEstimates",
    "replicate_variance",
    "make_jkn_replicates",
    "make_jk1_replicates",
    "replicate_estimates_via_if",
    "replicate_estimates_refit",
]

METHODS = ("brr", "fay", "jk1", "jkn", "sdr")


@dataclass(frozen=True, eq=False)
class ReplicateWeights:
    """Replicate weight columns and the rule that turns them into a variance.

    ``weights`` is ``(n, R)``. ``stratum`` (JKn only) gives the stratum of
    each replicate and ``scale`` its ``s_r``; when ``scale`` is omitted for
    JKn it is derived as ``(n_h - 1) / n_h`` from the stratum map.
    ``center`` is ``"full"`` (the full-sample estimate) or ``"mean"`` (the
    mean of the replicate estimates).
    """

    weights: np.ndarray
    method: str
    rho: Optional[float] = None
    stratum: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    center: str = "full"

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2:
            raise ValueError("replicate weights must be a two-dimensional (n, R) array")
        if W.shape[1] < 2:
            raise ValueError("at least two replicates are needed")
        if not np.all(np.isfinite(W)) or np.any(W < 0):
            raise ValueError("replicate weights must be finite and non-negative")
        if self.method not in METHODS:
            raise ValueError(f"unknown replicate method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.method == "fay":
            if self.rho is None or not (0.0 <= self.rho < 1.0):
                raise ValueError("Fay replicates need 0 <= rho < 1")
        if self.center not in ("full", "mean"):
            raise ValueError("center must be 'full' or 'mean'")
        W = W.copy()
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)
        R = W.shape[1]
        if self.method == "jkn":
            if self.stratum is None:
                raise ValueError("JKn replicates need a stratum for every replicate")
            st = np.asarray(self.stratum)
            if st.shape != (R,):
                raise ValueError("JKn stratum map must cover every replicate")
            object.__setattr__(self, "stratum", st)
            if self.scale is None:
                _, inv, counts = np.unique(st, return_inverse=True, return_counts=True)
                m = counts[inv].astype(float)
                object.__setattr__(self, "scale", (m - 1.0) / m)
        if self.scale is not None:
            s = np.asarray(self.scale, dtype=float)
            if s.shape != (R,):
                raise ValueError("scale must have one entry per replicate")
            object.__setattr__(self, "scale", s)

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    @property
    def R(self) -> int:
        return int(self.weights.shape[1])

    @property
    def factor(self) -> float:
        R = self.R
        if self.method == "brr":
            return 1.0 / R
        if self.method == "fay":
            return 1.0 / (R * (1.0 - self.rho) ** 2)
        if self.method == "jk1":
            return (R - 1.0) / R
        if self.method == "sdr":
            return 4.0 / R
        return 1.0  # jkn: the stratum terms live in ``scale``

    @property
    def multipliers(self) -> np.ndarray:
        """``c * s_r`` for every replicate."""
        s = np.ones(self.R) if self.scale is None else self.scale
        return self.factor * s

    @property
    def df(self) -> int:
        """Rank of the replicate weight matrix after centring each row."""
        W = self.weights
        Wc = W - W.mean(axis=1, keepdims=True)
        if not np.any(Wc):
            return 0
        sv = np.linalg.svd(Wc, compute_uv=False)
        return int(np.sum(sv > sv[0] * max(W.shape) * np.finfo(float).eps))

    def take(self, index) -> "ReplicateWeights":
        return ReplicateWeights(
            self.weights[np.asarray(index)], self.method, self.rho, self.stratum, self.scale, self.center
        )


@dataclass(frozen=True, eq=False)
class ReplicateEstimates:
    """Replicate estimates, ``(R, k)``; ``approximate`` marks the shortcut path."""

    values: np.ndarray
    approximate: bool


def replicate_variance(
    estimates_r: Union[ReplicateEstimates, np.ndarray],
    full_estimate,
    spec: ReplicateWeights,
    df: Optional[int] = None,
) -> VarianceResult:
    """``c * sum_r s_r (theta_r - center)(theta_r - center)'``.

    ``df`` defaults to the rank of the centred replicate weight matrix.
    """
    vals = estimates_r.values if isinstance(estimates_r, ReplicateEstimates) else estimates_r
    th = np.asarray(vals, dtype=float)
    if th.ndim == 1:
        th = th[:, None]
    if th.shape[0] != spec.R:
        raise VarianceError(f"{th.shape[0]} replicate estimates for {spec.R} replicate columns")
    if not np.all(np.isfinite(th)):
        raise VarianceError("a replicate estimate is not finite")
    full = np.atleast_1d(np.asarray(full_estimate, dtype=float))
    if full.shape[0] != th.shape[1]:
        raise VarianceError("full-sample estimate and replicate estimates differ in length")
    center = full if spec.center == "full" else th.mean(axis=0)
    d = th - center
    V = (d * spec.multipliers[:, None]).T @ d
    if df is None:
        df = spec.df
    return VarianceResult(V, int(df), "replicate")


def _jackknife_columns(w, psu, psu_stratum, n_psu, psus_per_stratum, strata):
    W = np.repeat(w[:, None], n_psu, axis=1)
    n_h = psus_per_stratum[psu_stratum].astype(float)  # per PSU
    for j in range(n_psu):
        h = psu_stratum[j]
        same = strata == h
        W[same, j] *= n_h[j] / (n_h[j] - 1.0)
        W[psu == j, j] = 0.0
    return W


def make_jkn_replicates(design: SurveyDesign, center: str = "full") -> ReplicateWeights:
    """Delete-one-PSU jackknife within strata: one replicate per PSU.

    The dropped PSU gets weight zero and the rest of its stratum is scaled
    by ``n_h / (n_h - 1)``. Finite population corrections are not carried
    into the replicates; a warning is issued when the design has them.
    """
    design.check_variance_ready()
    if np.any(design.fpc > 0):
        warnings.warn(
            "the design has sampling fractions; JKn replicates ignore them and "
            "will not match the corrected linearization variance",
            stacklevel=2,
        )
    W = _jackknife_columns(
        np.asarray(design.weights, dtype=float),
        design.psu,
        design.psu_stratum,
        design.n_psu,
        design.psus_per_stratum,
        design.strata,
    )
    return ReplicateWeights(W, "jkn", stratum=design.psu_stratum.copy(), center=center)


def make_jk1_replicates(design: SurveyDesign, center: str = "full") -> ReplicateWeights:
    """Delete-one-PSU jackknife ignoring strata."""
    if design.n_psu < 2:
        raise SingletonStratumError("_all")
    one = np.zeros(design.n_psu, dtype=np.int64)
    W = _jackknife_columns(
        np.asarray(design.weights, dtype=float),
        design.psu,
        one,
        design.n_psu,
        np.array([design.n_psu]),
        np.zeros(design.n, dtype=np.int64),
    )
    return ReplicateWeights(W, "jk1", center=center)


def replicate_estimates_via_if(psi, base_weights, replicate_weights, estimate) -> ReplicateEstimates:
    """First-order replicate estimates from stored linearized values.

    ``psi`` rows are ``w_i IF_i / W_hat``, so the weight change
    ``w_i^(r) - w_i`` moves the estimate by ``(w_i^(r) / w_i - 1) psi_i``.
    Exact for linear statistics of the weights; an approximation otherwise.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        psi = psi[:, None]
    w = np.asarray(base_weights, dtype=float)
    Wr = replicate_weights.weights if isinstance(replicate_weights, ReplicateWeights) else np.asarray(replicate_weights, dtype=float)
    if Wr.ndim != 2 or Wr.shape[0] != psi.shape[0] or w.shape != (psi.shape[0],):
        raise DesignError(
            f"shape mismatch: psi {psi.shape}, base weights {w.shape}, replicate weights {Wr.shape}"
        )
    if np.any(w <= 0):
        raise DesignError("base weights must be positive")
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    rel = Wr / w[:, None] - 1.0
    return ReplicateEstimates(est[None, :] + rel.T @ psi, approximate=True)


def replicate_estimates_refit(
    refit: Callable[[np.ndarray], np.ndarray],
    replicate_weights: ReplicateWeights,
    threads: int = 1,
) -> ReplicateEstimates:
    """Full recomputation: ``refit(weights)`` is called once per replicate column.

    Results are collected in replicate order whatever the thread count.
    """
    cols = [replicate_weights.weights[:, r] for r in range(replicate_weights.R)]

    def one(col):
        return np.atleast_1d(np.asarray(refit(col), dtype=float))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, cols))
    else:
        out = [one(c) for c in cols]
    return ReplicateEstimates(np.vstack(out), approximate=False)
