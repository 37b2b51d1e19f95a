"""Regression-path estimators: two-way fixed effects and interaction-weighted event studies.

Both run weighted least squares on unit-period rows after sweeping out
unit and period effects (cohort and period effects for repeated
cross-sections). Linearized values come from the coefficient weight
derivative ``w_i (X'WX)^-1 x_i u_i``; summed over a PSU, these are the
score totals of the regression sandwich.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from svydid.design import DesignError, PanelDataset, SurveyDesign, normalize_weights
from svydid.did_if import EstimationError
from svydid.regression import WlsFit, demean_two_way, wls
from svydid.results import EstimationResult, LinearizedFit

__all__ = ["SaFit", "fit_twfe", "fit_sun_abraham", "twfe", "sun_abraham"]


def _row_design(data: PanelDataset, weights, design: Optional[SurveyDesign], weighted: bool) -> SurveyDesign:
    if design is None:
        raw = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
        # without a design, each panel unit (or cross-section row) is its own PSU
        design = SurveyDesign.cluster(data.unit, weights=raw) if data.panel else SurveyDesign.iid(data.n, weights=raw)
    elif weights is not None:
        design = design.with_weights(weights)
    if design.n != data.n:
        raise DesignError("design rows do not match the dataset")
    if not weighted:
        design = design.with_weights(np.ones(data.n))
    if data.panel:
        data.unit_design(design)  # validates constancy within unit
    return design


def _first_factor(data: PanelDataset) -> np.ndarray:
    if data.panel:
        return np.asarray(data.unit_codes)
    g = np.asarray(data.first_treat)
    return np.where(np.isinf(g), -1, g).astype(np.int64)


def _within(data: PanelDataset, cols: np.ndarray, w: np.ndarray) -> np.ndarray:
    return demean_two_way(cols, _first_factor(data), data.period_codes, w)


def _coef_psi(fit: WlsFit, Xd: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-row ``w_i (X'WX)^-1 x_i u_i`` for the kept columns, shape (n, k)."""
    return (Xd[:, fit.kept] @ fit.bread) * (w * fit.residuals)[:, None]


def fit_twfe(data: PanelDataset, weights=None, design: Optional[SurveyDesign] = None, weighted: bool = True) -> LinearizedFit:
    """Two-way fixed-effects regression of the outcome on the treated-and-post indicator."""
    if data.n_periods < 2:
        raise EstimationError("TWFE needs at least two periods")
    design = _row_design(data, weights, design, weighted)
    w = normalize_weights(design.weights).w
    D = (np.asarray(data.time) >= np.asarray(data.first_treat)).astype(float)
    Z = _within(data, np.column_stack([data.y, D]), w)
    yd, Dd = Z[:, 0], Z[:, 1:]
    if float(np.dot(w, Dd[:, 0] ** 2)) <= 1e-12 * data.n:
        raise EstimationError("treatment indicator has no variation after removing unit and period effects")
    fit = wls(Dd, yd, w, names=("att",))
    psi = _coef_psi(fit, Dd, w)
    return LinearizedFit(
        estimator="twfe",
        estimates=fit.coef.copy(),
        names=("att",),
        psi=psi,
        design=design,
        weighted=weighted,
        k_model=1,
    )


@dataclass(frozen=True, eq=False)
class SaFit:
    """Interaction-weighted event-study fit.

    ``coef`` maps ``(g, e)`` to the cohort-by-event-time coefficient;
    ``iw_weights`` maps each target to its ``(g, e)`` weights, which sum to
    one; ``shares`` are weighted cohort sizes.
    """

    coef: Dict[Tuple[float, int], float]
    shares: Dict[float, float]
    iw_weights: Dict[str, Dict[Tuple[float, int], float]]
    targets: Tuple[str, ...]
    estimates: np.ndarray
    wls_fit: WlsFit = field(repr=False)
    dropped: Tuple[str, ...] = ()
    linear: Optional[LinearizedFit] = field(default=None, repr=False)


def fit_sun_abraham(
    data: PanelDataset,
    weights=None,
    design: Optional[SurveyDesign] = None,
    weighted: bool = True,
    event: bool = False,
) -> SaFit:
    """Cohort-by-event-time saturated regression with interaction weighting.

    Reference categories are the never-treated units and event time -1.
    The overall effect averages the post-treatment coefficients with weights
    proportional to weighted cohort size; with ``event=True`` one target per
    event time is added after it. Aggregation weights are held fixed in the
    variance.
    """
    g = np.asarray(data.first_treat)
    if not np.any(np.isinf(g)):
        raise EstimationError("interaction-weighted estimation needs never-treated units")
    cohorts = data.cohorts
    if cohorts.size == 0:
        raise EstimationError("no treated cohort")
    design = _row_design(data, weights, design, weighted)
    w = normalize_weights(design.weights).w
    t = np.asarray(data.time)

    cells = []
    cols = []
    for c in cohorts:
        in_c = g == c
        rel = t - c
        for e in np.unique(rel[in_c]):
            if e == -1:
                continue
            cells.append((float(c), int(e)))
            cols.append((in_c & (rel == e)).astype(float))
    if not cells:
        raise EstimationError("no cohort-by-event-time cells")
    names = tuple(f"g{int(c)}_e{e}" for c, e in cells)
    Xc = np.column_stack(cols)
    Z = _within(data, np.column_stack([data.y, Xc]), w)
    fit = wls(Z[:, 1:], Z[:, 0], w, names=names)
    kept_cells = [cells[j] for j in fit.kept]
    coef = {cell: float(b) for cell, b in zip(kept_cells, fit.coef)}

    # weighted cohort sizes from one row per estimation unit
    rows = data.unit_first_row() if data.panel else np.arange(data.n)
    shares = {float(c): float(w[rows][g[rows] == c].sum()) for c in cohorts}

    targets = ["overall"]
    groups = {"overall": [cell for cell in kept_cells if cell[1] >= 0]}
    if event:
        for e in sorted({e for _, e in kept_cells}):
            targets.append(f"e{e}")
            groups[f"e{e}"] = [cell for cell in kept_cells if cell[1] == e]
    if not groups["overall"]:
        raise EstimationError("no post-treatment cohort-by-event-time coefficient")

    A = np.zeros((len(kept_cells), len(targets)))
    iw: Dict[str, Dict[Tuple[float, int], float]] = {}
    for j, name in enumerate(targets):
        members = groups[name]
        sz = np.array([shares[c] for c, _ in members])
        om = sz / sz.sum()
        iw[name] = {cell: float(o) for cell, o in zip(members, om)}
        for cell, o in zip(members, om):
            A[kept_cells.index(cell), j] = o
    est = fit.coef @ A
    psi = _coef_psi(fit, Z[:, 1:], w) @ A
    lin = LinearizedFit(
        estimator="sun_abraham",
        estimates=est,
        names=tuple(targets),
        psi=psi,
        design=design,
        weighted=weighted,
        k_model=int(fit.kept.size),
        extra={"dropped": list(fit.dropped)} if fit.dropped else {},
    )
    return SaFit(
        coef=coef,
        shares=shares,
        iw_weights=iw,
        targets=tuple(targets),
        estimates=est,
        wls_fit=fit,
        dropped=fit.dropped,
        linear=lin,
    )


def twfe(
    data: PanelDataset,
    weights=None,
    design: Optional[SurveyDesign] = None,
    mode: str = "design",
    level: float = 0.95,
) -> EstimationResult:
    """TWFE estimate with inference in ``mode``.

    ``mode="hc1"`` refits without weights; the other modes use the design
    weights (or ``weights``).
    """
    fit = fit_twfe(data, weights, design, weighted=mode != "hc1")
    return fit.result(mode, level)


def sun_abraham(
    data: PanelDataset,
    weights=None,
    design: Optional[SurveyDesign] = None,
    mode: str = "design",
    level: float = 0.95,
    event: bool = False,
) -> EstimationResult:
    """Interaction-weighted overall ATT with inference in ``mode``."""
    sa = fit_sun_abraham(data, weights, design, weighted=mode != "hc1", event=event)
    return sa.linear.result(mode, level)
