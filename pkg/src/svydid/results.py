"""Fitted estimators and inference results."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from svydid.design import SurveyDesign, kish_deff_w
from svydid.tsl import (
    LinearizedSample,
    VarianceResult,
    cluster_only_variance,
    t_interval,
    tsl_variance,
)

__all__ = ["SCHEMA_VERSION", "LinearizedFit", "EstimationResult"]

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class EstimationResult:
    """Point estimate with standard error, df and confidence interval."""

    estimator: str
    estimate: float
    se: float
    df: int
    ci: Tuple[float, float]
    mode: str
    level: float
    n: int
    variance: VarianceResult = field(repr=False)
    weighted: bool = True
    deff: Optional[float] = None
    kish_deff: Optional[float] = None
    names: Tuple[str, ...] = ("att",)
    estimates: Optional[np.ndarray] = field(default=None, repr=False)
    extra: Dict[str, Any] = field(default_factory=dict, repr=False)

    def covers(self, truth: float) -> bool:
        return self.ci[0] <= truth <= self.ci[1]

    def to_record(self) -> Dict[str, Any]:
        rec: Dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "estimator": self.estimator,
            "estimate": self.estimate,
            "se": self.se,
            "df": self.df,
            "ci_lower": self.ci[0],
            "ci_upper": self.ci[1],
            "level": self.level,
            "mode": self.mode,
            "weighted": self.weighted,
            "n": self.n,
            "deff": self.deff,
            "kish_deff": self.kish_deff,
        }
        if self.estimates is not None and len(self.names) > 1:
            se = self.variance.se
            rec["targets"] = [
                {"name": nm, "estimate": float(e), "se": float(s)}
                for nm, e, s in zip(self.names, self.estimates, se)
            ]
        for k, v in self.extra.items():
            rec.setdefault(k, v)
        return rec


@dataclass(frozen=True, eq=False)
class LinearizedFit:
    """An estimator fitted once, ready for any inference mode.

    ``psi`` rows line up with ``design`` rows (panel units for the
    influence-function estimators, unit-period rows for the regression
    ones). ``k_model`` is the parameter count that sets the HC1
    small-sample factor and degrees of freedom.
    """

    estimator: str
    estimates: np.ndarray
    names: Tuple[str, ...]
    psi: np.ndarray
    design: SurveyDesign
    weighted: bool
    k_model: int = 1
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def estimate(self) -> float:
        return float(self.estimates[0])

    @property
    def linearized(self) -> LinearizedSample:
        return LinearizedSample(self.psi, self.design, self.names)

    @property
    def n(self) -> int:
        return self.design.n

    def variance(self, mode: str = "design") -> VarianceResult:
        lin = self.linearized
        if mode == "design":
            return tsl_variance(lin)
        if mode == "cluster":
            return cluster_only_variance(lin)
        if mode == "hc1":
            # n/(n-1) sum psi psi' from observation-level PSUs, rescaled to n/(n-k)
            n, k = self.n, self.k_model
            if n <= k:
                raise ValueError(f"HC1 needs n > k (n={n}, k={k})")
            iid = tsl_variance(lin, SurveyDesign.iid(n), mode="hc1")
            return VarianceResult(iid.vcov * (n - 1) / (n - k), n - k, "hc1")
        if mode == "replicate":
            raise ValueError("replicate variance needs replicate weights; see svydid.replicate")
        raise ValueError(f"unknown inference mode {mode!r}")

    def result(
        self,
        mode: str = "design",
        level: float = 0.95,
        variance: Optional[VarianceResult] = None,
        hc1: Optional[VarianceResult] = None,
    ) -> EstimationResult:
        """Inference for the first target (usually the overall ATT).

        ``hc1``, when given, supplies the naive variance used for the design
        effect ratio.
        """
        v = self.variance(mode) if variance is None else variance
        se = float(v.se[0])
        lo, hi = t_interval(self.estimate, se, v.df, level)
        deff = None
        if hc1 is not None and hc1.variance > 0:
            deff = v.variance / hc1.variance
        return EstimationResult(
            estimator=self.estimator,
            estimate=self.estimate,
            se=se,
            df=int(v.df),
            ci=(lo, hi),
            mode=v.mode,
            level=level,
            n=self.n,
            variance=v,
            weighted=self.weighted,
            deff=deff,
            kish_deff=kish_deff_w(self.design.weights),
            names=self.names,
            estimates=np.asarray(self.estimates),
            extra=dict(self.extra),
        )
