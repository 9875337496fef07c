"""Covariate-adjusted risk curves, biomarker cut-off estimation, and
net-gain comparison for randomized two-arm trials."""

__version__ = "0.1.0"

from .bhm import BhmConfig, BhmPosterior, run_mcmc
from .calibration import CalibrationTable, calibrate
from .cutoff import (
    CutoffReport,
    classify_thresholds,
    cutoff_se,
    formula_cutoff,
    interpolation_cutoff,
    root_cutoff,
)
from .data_model import (
    AnalysisDataset,
    ColumnMap,
    Covariate,
    DesignMatrix,
    OutcomeSpec,
    build_design,
    load_csv,
    marker_quantile,
    percentile_rescale,
)
from .errors import DataValidationError, NumericalError, PredmarkError
from .marginal_risk import (
    RiskCurves,
    conditional_risk,
    default_grid,
    marginalize,
    risk_difference_curve,
)
from .minp_scan import ScanResult, bh_adjust, candidate_cutoffs, scan
from .model_fit import (
    FittedModel,
    fit_cox,
    fit_dataset,
    fit_linear,
    fit_logistic,
    interaction_test,
    sandwich_covariance,
)
from .netgain import (
    DeltaSignRule,
    FixedCutoffRule,
    NetGainSummary,
    bootstrap_compare,
    net_gain,
)
from .sim_harness import (
    MetricsReport,
    Scenario,
    generate_dataset,
    power_study,
    preset_scenario,
    run_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]
