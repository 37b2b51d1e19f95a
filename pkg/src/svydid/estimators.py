"""Uniform entry point over the four estimators."""

from __future__ import annotations

from typing import Optional

import numpy as np

from svydid.design import DesignError, PanelDataset, SurveyDesign
from svydid.did_if import callaway_santanna
from svydid.did_reg import fit_sun_abraham, fit_twfe
from svydid.replicate import (
    ReplicateWeights,
    replicate_estimates_refit,
    replicate_estimates_via_if,
    replicate_variance,
)
from svydid.results import EstimationResult, LinearizedFit

__all__ = ["ESTIMATORS", "fit", "fit_cs", "estimate", "estimate_replicate"]

ESTIMATORS = ("cs_reg", "cs_dr", "sun_abraham", "twfe")


def _resolve(data: PanelDataset, design: Optional[SurveyDesign], weighted: bool) -> SurveyDesign:
    if design is None:
        design = SurveyDesign.cluster(data.unit) if data.panel else SurveyDesign.iid(data.n)
    if design.n != data.n:
        raise DesignError("design rows do not match the dataset")
    if not weighted:
        design = design.with_weights(np.ones(data.n))
    return design


def fit_cs(
    data: PanelDataset,
    design: Optional[SurveyDesign] = None,
    method: str = "reg",
    weighted: bool = True,
    scheme: str = "overall",
    comparison: str = "never",
    share_correction: bool = False,
) -> LinearizedFit:
    """Group-time ATT estimator fitted once, with the design at unit level."""
    design = _resolve(data, design, weighted)
    est_design = data.unit_design(design) if data.panel else design
    cs = callaway_santanna(
        data,
        design.weights,
        method=method,
        comparison=comparison,
        scheme=scheme,
        share_correction=share_correction,
    )
    extra = {}
    clipped = sum(c.clipped for c in cs.cells)
    if clipped:
        extra["clipped_propensities"] = int(clipped)
    return LinearizedFit(
        estimator=f"cs_{method}",
        estimates=cs.aggregate.estimates,
        names=cs.aggregate.targets,
        psi=cs.aggregate.psi,
        design=est_design,
        weighted=weighted,
        k_model=1,
        extra=extra,
    )


def fit(
    data: PanelDataset,
    design: Optional[SurveyDesign] = None,
    estimator: str = "cs_reg",
    weighted: bool = True,
    **kwargs,
) -> LinearizedFit:
    """Fit ``estimator`` on ``data``; ``weighted=False`` ignores the design weights."""
    if estimator == "cs_reg":
        return fit_cs(data, design, "reg", weighted, **kwargs)
    if estimator == "cs_dr":
        return fit_cs(data, design, "dr", weighted, **kwargs)
    if estimator == "twfe":
        return fit_twfe(data, design=_resolve(data, design, weighted), weighted=weighted)
    if estimator == "sun_abraham":
        sa = fit_sun_abraham(data, design=_resolve(data, design, weighted), weighted=weighted, **kwargs)
        return sa.linear
    raise ValueError(f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}")


def estimate(
    data: PanelDataset,
    design: Optional[SurveyDesign] = None,
    estimator: str = "cs_reg",
    mode: str = "design",
    level: float = 0.95,
    **kwargs,
) -> EstimationResult:
    """Fit and infer in one call. ``mode="hc1"`` fits without weights."""
    return fit(data, design, estimator, weighted=mode != "hc1", **kwargs).result(mode, level)


def estimate_replicate(
    data: PanelDataset,
    design: SurveyDesign,
    estimator: str,
    replicates: ReplicateWeights,
    refit: bool = False,
    level: float = 0.95,
    threads: int = 1,
    **kwargs,
) -> EstimationResult:
    """Weighted fit with replicate-weight variance.

    ``replicates`` is row-aligned with ``data``. By default replicate
    estimates come from reweighting the stored linearized values; with
    ``refit=True`` the estimator is rerun under every replicate column
    (rows with zero replicate weight are dropped for that run).
    """
    if replicates.n != data.n:
        raise DesignError("replicate weights do not match the dataset rows")
    full = fit(data, design, estimator, weighted=True, **kwargs)
    if refit:

        def one(col):
            keep = np.flatnonzero(col > 0)
            sub = data.take(keep)
            return fit(sub, SurveyDesign.cluster(sub.unit, weights=col[keep]), estimator, **kwargs).estimates

        reps = replicate_estimates_refit(one, replicates, threads=threads)
    else:
        spec = replicates
        if estimator.startswith("cs_") and data.panel:
            spec = replicates.take(data.unit_first_row())
        reps = replicate_estimates_via_if(full.psi, full.design.weights, spec, full.estimates)
    v = replicate_variance(reps, full.estimates, replicates)
    res = full.result("replicate", level, variance=v)
    res.extra["replicate_method"] = replicates.method
    res.extra["replicate_refit"] = bool(refit)
    return res
