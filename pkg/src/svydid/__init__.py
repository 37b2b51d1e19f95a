"""Design-based variance for difference-in-differences estimators."""

from svydid._kernels import BACKEND
from svydid.design import (
    NEVER,
    DesignError,
    NormalizedWeights,
    PanelDataset,
    SingletonStratumError,
    SurveyDesign,
    design_df,
    kish_deff_w,
    normalize_weights,
)
from svydid.did_if import (
    AggregatedATT,
    EstimationError,
    GroupTimeATT,
    OverlapError,
    aggregate_att,
    callaway_santanna,
    cs_dr_attgt,
    cs_reg_attgt,
)
from svydid.did_reg import SaFit, fit_sun_abraham, fit_twfe, sun_abraham, twfe
from svydid.estimators import ESTIMATORS, estimate, estimate_replicate, fit
from svydid.harness import CellReport, render_report, run_cell, summarize
from svydid.regression import LogitFit, RegressionError, SeparationError, WlsFit, demean_within, logit_irls, wls
from svydid.replicate import (
    ReplicateEstimates,
    ReplicateWeights,
    make_jk1_replicates,
    make_jkn_replicates,
    replicate_estimates_refit,
    replicate_estimates_via_if,
    replicate_variance,
)
from svydid.results import EstimationResult, LinearizedFit
from svydid.simdgp import SCENARIOS, ScenarioConfig, generate, scenario, true_att
from svydid.tsl import (
    LinearizedSample,
    VarianceError,
    VarianceResult,
    cluster_only_variance,
    hc1_variance,
    regression_sandwich,
    t_interval,
    t_quantile,
    tsl_variance,
)

__version__ = "0.1.0"
