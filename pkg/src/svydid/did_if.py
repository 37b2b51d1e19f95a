"""Group-time ATTs with influence values, and their aggregation.

Every estimator here returns, next to its point estimate, the vector
``psi`` whose entry ``i`` is the derivative of the estimate with respect to
a relative change in estimation unit ``i``'s weight (``w_i * d theta / d w_i``).
That vector is what the linearization variance consumes. For panels the
estimation units are the panel units; for repeated cross-sections they are
the rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from svydid.design import DesignError, PanelDataset, SurveyDesign, normalize_weights
from svydid.regression import RegressionError, logit_irls, wls

__all__ = [
    "EstimationError",
    "OverlapError",
    "GroupTimeATT",
    "AggregatedATT",
    "CellFrame",
    "cell_frame",
    "cs_reg_attgt",
    "cs_dr_attgt",
    "aggregate_att",
    "callaway_santanna",
    "CsFit",
]

PS_CLIP = 1e-6


class EstimationError(ValueError):
    """A cell or aggregate cannot be estimated."""


class OverlapError(EstimationError):
    """Propensity scores too close to one for inverse-probability weighting."""

    def __init__(self, rows):
        self.rows = np.asarray(rows)
        shown = ", ".join(str(int(r)) for r in self.rows[:10])
        more = "" if self.rows.size <= 10 else f" (+{self.rows.size - 10} more)"
        super().__init__(f"propensity score >= 1 - {PS_CLIP:g} for estimation rows {shown}{more}")


@dataclass(frozen=True, eq=False)
class GroupTimeATT:
    """One ATT(g, t) cell.

    ``psi`` has one entry per estimation unit; it is zero outside the cohort
    and comparison cells.
    """

    g: float
    t: int
    att: float
    psi: np.ndarray
    cohort_weight: float
    comparison_weight: float
    n_cohort: int
    n_comparison: int
    method: str = "reg"
    clipped: int = 0

    @property
    def post(self) -> bool:
        return self.t >= self.g

    @property
    def event_time(self) -> int:
        return int(self.t - self.g)


@dataclass(frozen=True, eq=False)
class AggregatedATT:
    """Linear aggregation of group-time cells.

    ``weights`` maps ``(g, t)`` to the aggregation weight of each target;
    ``psi`` has one column per target (``overall`` or each event time).
    """

    targets: Tuple[str, ...]
    estimates: np.ndarray
    psi: np.ndarray
    weights: Dict[str, Dict[Tuple[float, int], float]]
    share_correction: bool = False

    @property
    def overall(self) -> float:
        return float(self.estimates[0])


# --------------------------------------------------------------------------
# estimation frame


@dataclass(frozen=True, eq=False)
class CellFrame:
    """Estimation-level arrays shared by all cells of one fit."""

    panel: bool
    w: np.ndarray              # normalized weights per estimation unit
    g: np.ndarray              # first-treatment period per estimation unit
    periods: np.ndarray
    Y: np.ndarray              # (units, periods) for panels; (rows,) otherwise
    period_code: Optional[np.ndarray]  # per row, repeated cross-sections only
    X: Optional[np.ndarray]    # covariates per estimation unit (no intercept)
    rows: np.ndarray           # dataset row of each estimation unit (first row for panels)

    @property
    def n(self) -> int:
        return int(self.w.size)


def _estimation_rows(data: PanelDataset) -> np.ndarray:
    return data.unit_first_row() if data.panel else np.arange(data.n)


def _raw_weights(data: PanelDataset, weights) -> np.ndarray:
    if weights is None:
        return np.ones(data.n)
    if isinstance(weights, SurveyDesign):
        weights = weights.weights
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != data.n:
        raise DesignError("weights must have one entry per dataset row")
    return w


def cell_frame(data: PanelDataset, weights=None) -> CellFrame:
    """Collapse ``data`` and row-aligned raw weights to estimation units."""
    raw = _raw_weights(data, weights)
    rows = _estimation_rows(data)
    if data.panel:
        if np.any(raw != raw[rows][data.unit_codes]):
            raise DesignError("weights must be constant within unit")
        Y = data.wide()
        pc = None
        X = data.unit_covariates()
    else:
        Y = np.asarray(data.y)
        pc = np.asarray(data.period_codes)
        X = data.covariates
    nw = normalize_weights(raw[rows])
    return CellFrame(
        panel=data.panel,
        w=nw.w,
        g=np.asarray(data.first_treat)[rows],
        periods=np.asarray(data.periods),
        Y=Y,
        period_code=pc,
        X=None if X is None else np.asarray(X),
        rows=rows,
    )


def _period_index(frame: CellFrame, period) -> int:
    idx = np.searchsorted(frame.periods, period)
    if idx >= frame.periods.size or frame.periods[idx] != period:
        raise EstimationError(f"period {period} is not observed")
    return int(idx)


def _groups(frame: CellFrame, g, t, comparison):
    cohort = frame.g == g
    if comparison == "never":
        comp = np.isinf(frame.g)
    elif comparison == "notyet":
        # never treated, or first treated after both periods used by the cell
        comp = (frame.g > max(t, g - 1)) & (frame.g != g)
    else:
        raise ValueError(f"unknown comparison group {comparison!r}")
    return cohort, comp


@dataclass
class _Slot:
    """One outcome contrast: rows, outcome on those rows, and sign."""

    idx: np.ndarray
    y: np.ndarray
    sign: float


def _slots(frame: CellFrame, g, t, cohort, comp):
    """Outcome contrasts entering ATT(g, t) with base period g - 1."""
    tb = _period_index(frame, g - 1)
    tt = _period_index(frame, t)
    use = cohort | comp
    if frame.panel:
        idx = np.flatnonzero(use)
        dy = frame.Y[idx, tt] - frame.Y[idx, tb]
        return [_Slot(idx, dy, 1.0)]
    out = []
    for code, sign in ((tt, 1.0), (tb, -1.0)):
        idx = np.flatnonzero(use & (frame.period_code == code))
        out.append(_Slot(idx, frame.Y[idx], sign))
    return out


def _check_cells(g, t, cohort_mask, comp_mask):
    if not cohort_mask.any():
        raise EstimationError(f"cell (g={g}, t={t}): cohort is empty")
    if not comp_mask.any():
        raise EstimationError(f"cell (g={g}, t={t}): comparison group is empty")


# --------------------------------------------------------------------------
# regression (unconditional) ATT


def _reg_cell(frame: CellFrame, g, t, comparison="never") -> GroupTimeATT:
    cohort, comp = _groups(frame, g, t, comparison)
    w = frame.w
    psi = np.zeros(frame.n)
    att = 0.0
    for s in _slots(frame, g, t, cohort, comp):
        for mask, sgn in ((cohort[s.idx], 1.0), (comp[s.idx], -1.0)):
            _check_cells(g, t, cohort[s.idx], comp[s.idx])
            rows = s.idx[mask]
            ws = w[rows]
            W = ws.sum()
            mu = float(np.dot(ws, s.y[mask]) / W)
            att += s.sign * sgn * mu
            psi[rows] += s.sign * sgn * ws * (s.y[mask] - mu) / W
    return GroupTimeATT(
        g=g,
        t=int(t),
        att=float(att),
        psi=psi,
        cohort_weight=float(w[cohort].sum()),
        comparison_weight=float(w[comp].sum()),
        n_cohort=int(cohort.sum()),
        n_comparison=int(comp.sum()),
        method="reg",
    )


def cs_reg_attgt(data: PanelDataset, weights, g, t, comparison: str = "never") -> GroupTimeATT:
    """Unconditional group-time ATT: weighted mean change of cohort ``g``
    between ``g - 1`` and ``t`` minus the same for the comparison group.

    With repeated cross-sections the change is the difference of the four
    weighted cell means (cohort/comparison by period).
    """
    return _reg_cell(cell_frame(data, weights), g, t, comparison)


# --------------------------------------------------------------------------
# doubly robust ATT


def _dr_cell(frame: CellFrame, g, t, comparison="never") -> GroupTimeATT:
    if frame.X is None:
        raise EstimationError("doubly robust estimation needs covariates")
    cohort, comp = _groups(frame, g, t, comparison)
    _check_cells(g, t, cohort, comp)
    w = frame.w
    n = frame.n
    Z = np.column_stack([np.ones(n), frame.X])
    k = Z.shape[1]

    # propensity model on every estimation unit of the cell
    use = np.flatnonzero(cohort | comp)
    slots = _slots(frame, g, t, cohort, comp)
    if not frame.panel:
        use = np.concatenate([s.idx for s in slots])
    D = cohort[use].astype(float)
    try:
        lf = logit_irls(Z[use], D, w[use])
    except RegressionError as exc:
        raise type(exc)(f"cell (g={g}, t={t}) propensity model: {exc}") from exc
    p = lf.prob
    too_high = p >= 1.0 - PS_CLIP
    if np.any(too_high & (D == 0)):
        raise OverlapError(use[too_high & (D == 0)])
    clipped = int(np.sum(p < PS_CLIP))
    p = np.clip(p, PS_CLIP, 1.0 - PS_CLIP)
    r_all = np.zeros(n)
    r_all[use] = p / (1.0 - p)
    p_all = np.zeros(n)
    p_all[use] = p
    H_ps = Z[use].T @ (Z[use] * (w[use] * p * (1 - p))[:, None])
    H_ps_inv = np.linalg.inv(H_ps)

    deriv = np.zeros(n)         # d att / d w_i
    ps_grad = np.zeros(k)       # d att / d gamma
    att = 0.0
    for s in slots:
        ci = s.idx[cohort[s.idx]]
        yi_c = s.y[cohort[s.idx]]
        ki = s.idx[comp[s.idx]]
        yi_k = s.y[comp[s.idx]]
        _check_cells(g, t, cohort[s.idx], comp[s.idx])
        # outcome regression on the comparison group
        try:
            of = wls(Z[ki], yi_k, w[ki])
        except RegressionError as exc:
            raise EstimationError(f"cell (g={g}, t={t}) outcome model: {exc}") from exc
        if of.kept.size < k:
            raise EstimationError(f"cell (g={g}, t={t}) outcome model: collinear covariates")
        beta = of.coef
        H_or_inv = of.bread
        o_c = yi_c - Z[ci] @ beta
        o_k = yi_k - Z[ki] @ beta
        wc, wk, rk = w[ci], w[ki], r_all[ki]
        B_T = wc.sum()
        B_C = float(np.dot(wk, rk))
        eta_T = float(np.dot(wc, o_c) / B_T)
        eta_C = float(np.dot(wk * rk, o_k) / B_C)
        att += s.sign * (eta_T - eta_C)

        m1 = (wc[:, None] * Z[ci]).sum(0) / B_T
        m3 = ((wk * rk)[:, None] * Z[ki]).sum(0) / B_C
        m2 = ((wk * rk * (o_k - eta_C))[:, None] * Z[ki]).sum(0) / B_C
        deriv[ci] += s.sign * (o_c - eta_T) / B_T
        deriv[ki] += s.sign * (-rk * (o_k - eta_C) / B_C + (Z[ki] @ (H_or_inv @ (m3 - m1))) * o_k)
        ps_grad += s.sign * (-m2)
    deriv[use] += (Z[use] @ (H_ps_inv @ ps_grad)) * (D - p_all[use])
    return GroupTimeATT(
        g=g,
        t=int(t),
        att=float(att),
        psi=w * deriv,
        cohort_weight=float(w[cohort].sum()),
        comparison_weight=float(w[comp].sum()),
        n_cohort=int(cohort.sum()),
        n_comparison=int(comp.sum()),
        method="dr",
        clipped=clipped,
    )


def cs_dr_attgt(data: PanelDataset, weights, g, t, comparison: str = "never") -> GroupTimeATT:
    """Doubly robust group-time ATT with weighted nuisance fits.

    Outcome model: WLS of the outcome change (or, for cross-sections, the
    period outcome) on ``[1, X]`` in the comparison group. Propensity model:
    weighted logit of cohort membership on ``[1, X]``. The estimate is the
    cohort mean of the outcome-model residual minus its odds-weighted,
    self-normalized comparison mean. ``psi`` includes the terms from both
    nuisance fits, obtained by differentiating their estimating equations.
    Propensities below 1e-6 are clipped (count in ``clipped``); values at or
    above ``1 - 1e-6`` in the comparison group raise :class:`OverlapError`.
    """
    return _dr_cell(cell_frame(data, weights), g, t, comparison)


# --------------------------------------------------------------------------
# aggregation


def aggregate_att(
    cells: Sequence[GroupTimeATT],
    scheme: str = "overall",
    share_correction: bool = False,
    cohort_of: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> AggregatedATT:
    """Combine cells with weights proportional to the weighted cohort size.

    ``scheme="overall"`` averages all post-treatment cells; ``"event"``
    produces one target per event time ``e = t - g`` (pre-periods included
    when present), and ``"both"`` stacks the overall target first.

    The cohort-size weights are estimated too. Their contribution to ``psi``
    is left out unless ``share_correction`` is set, which needs the
    estimation-unit cohorts ``cohort_of`` and normalized ``weights``.
    """
    cells = list(cells)
    if not cells:
        raise EstimationError("no cells to aggregate")
    post = [c for c in cells if c.post]
    targets: List[Tuple[str, List[GroupTimeATT]]] = []
    if scheme in ("overall", "both"):
        if not post:
            raise EstimationError("no post-treatment cells to aggregate")
        targets.append(("overall", post))
    if scheme in ("event", "both"):
        for e in sorted({c.event_time for c in cells}):
            targets.append((f"e{e}", [c for c in cells if c.event_time == e]))
    if not targets:
        raise ValueError(f"unknown aggregation scheme {scheme!r}")
    if share_correction and (cohort_of is None or weights is None):
        raise ValueError("share_correction needs cohort_of and weights")

    n = cells[0].psi.size
    est = np.empty(len(targets))
    psi = np.zeros((n, len(targets)))
    wmap: Dict[str, Dict[Tuple[float, int], float]] = {}
    for j, (name, group) in enumerate(targets):
        sizes = np.array([c.cohort_weight for c in group])
        S = sizes.sum()
        om = sizes / S
        atts = np.array([c.att for c in group])
        est[j] = float(np.dot(om, atts))
        for c, o in zip(group, om):
            psi[:, j] += o * c.psi
        if share_correction:
            # a unit of cohort g moves every cell of g: w_i * sum_c (att_c - theta) / S
            for c, a in zip(group, atts):
                member = cohort_of == c.g
                psi[:, j] += weights * member * (a - est[j]) / S
        wmap[name] = {(c.g, c.t): float(o) for c, o in zip(group, om)}
    return AggregatedATT(
        targets=tuple(n for n, _ in targets),
        estimates=est,
        psi=psi,
        weights=wmap,
        share_correction=share_correction,
    )


# --------------------------------------------------------------------------
# full fit


@dataclass(frozen=True, eq=False)
class CsFit:
    cells: Tuple[GroupTimeATT, ...]
    aggregate: AggregatedATT
    frame: CellFrame = field(repr=False)
    method: str = "reg"

    @property
    def att(self) -> float:
        return self.aggregate.overall if self.aggregate.targets[0] == "overall" else float(self.aggregate.estimates[0])

    @property
    def psi(self) -> np.ndarray:
        return self.aggregate.psi


def callaway_santanna(
    data: PanelDataset,
    weights=None,
    method: str = "reg",
    comparison: str = "never",
    scheme: str = "overall",
    include_pre: bool = False,
    share_correction: bool = False,
) -> CsFit:
    """All group-time cells with base period ``g - 1`` and their aggregate.

    ``weights`` is a row-aligned raw weight vector or a :class:`SurveyDesign`
    (its weights are used); ``None`` means equal weights.
    """
    frame = cell_frame(data, weights)
    fn = {"reg": _reg_cell, "dr": _dr_cell}.get(method)
    if fn is None:
        raise ValueError(f"unknown method {method!r}")
    want_pre = include_pre or scheme in ("event", "both")
    cells = []
    for g in data.cohorts:
        for t in frame.periods:
            if t == g - 1 or (t < g and not want_pre):
                continue
            if g - 1 < frame.periods[0]:
                raise EstimationError(f"cohort {g} has no pre-treatment period")
            cells.append(fn(frame, g, int(t), comparison))
    agg = aggregate_att(
        cells,
        scheme=scheme,
        share_correction=share_correction,
        cohort_of=frame.g,
        weights=frame.w,
    )
    return CsFit(cells=tuple(cells), aggregate=agg, frame=frame, method=method)
