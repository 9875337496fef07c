"""Marginalized per-arm risk curves over a biomarker grid.

For each grid value z and arm a, the risk is the average of the model's
conditional prediction over every subject's covariate row with treatment and
biomarker held at (a, z).  Standard errors come from the delta method through
that average: the gradient of the averaged prediction in beta, contracted
with the sandwich covariance for GLM families and with the model-based
covariance for Cox (the baseline hazard is treated as fixed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data_model import AnalysisDataset, build_design
from .errors import DataValidationError
from .model_fit import FittedModel
from .survival import km_median

Z95 = float(norm.ppf(0.975))

_CSV_COLUMNS = (
    "z", "risk0", "se0", "lo0", "hi0",
    "risk1", "se1", "lo1", "hi1",
    "diff", "se_diff", "lo_diff", "hi_diff",
)


@dataclass(frozen=True)
class ArmCurve:
    """Marginalized risk for one arm over a grid, with delta-method SEs."""

    arm: int
    grid: np.ndarray
    risk: np.ndarray
    se: np.ndarray
    gradient: np.ndarray  # (G, k) gradient of the averaged risk in beta


@dataclass(frozen=True)
class RiskCurves:
    grid: np.ndarray
    risk0: np.ndarray
    se0: np.ndarray
    lo0: np.ndarray
    hi0: np.ndarray
    risk1: np.ndarray
    se1: np.ndarray
    lo1: np.ndarray
    hi1: np.ndarray
    diff: np.ndarray
    se_diff: np.ndarray
    lo_diff: np.ndarray
    hi_diff: np.ndarray
    landmark: float | None
    n_marginalized: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for i in range(len(self.grid)):
                writer.writerow(
                    [f"{getattr(self, c)[i]:.10g}" for c in _CSV_COLUMNS]
                )


def _legend_pieces(model: FittedModel):
    """Split beta into (intercept, bA, bZ, bAZ, covariate block)."""
    d = model.design
    beta = model.beta
    b0 = beta[0] if d.has_intercept else 0.0
    cov_idx = list(d.covariate_idx)
    return (
        float(b0),
        float(beta[d.treatment_idx]),
        float(beta[d.biomarker_idx]),
        float(beta[d.interaction_idx]),
        beta[cov_idx],
        cov_idx,
    )


def _covariate_rows(model: FittedModel, ds: AnalysisDataset | None) -> np.ndarray:
    """Covariate block used as the standardization population."""
    d = model.design
    if ds is None:
        return d.matrix[:, list(d.covariate_idx)]
    rebuilt = build_design(ds, intercept=d.has_intercept)
    if rebuilt.columns != d.columns:
        raise DataValidationError(
            "dataset covariate structure does not match the fitted model"
        )
    return rebuilt.matrix[:, list(rebuilt.covariate_idx)]


def _check_landmark(model: FittedModel, landmark) -> float:
    if landmark is None:
        raise DataValidationError("survival risks need a landmark time")
    if landmark <= 0 or (model.max_time is not None and landmark > model.max_time):
        raise DataValidationError(
            f"landmark {landmark} outside the observed time range"
        )
    return float(landmark)


def conditional_risk(
    model: FittedModel,
    a: float,
    z: float,
    x: np.ndarray | None = None,
    landmark: float | None = None,
) -> float:
    """Model-based risk for one subject at treatment ``a`` and marker ``z``.

    ``x`` is the covariate row (matching the design's covariate columns);
    omitted when the model has none.
    """
    b0, ba, bz, baz, bx, _ = _legend_pieces(model)
    xpart = 0.0 if len(bx) == 0 else float(np.dot(np.atleast_1d(x), bx))
    lp = b0 + ba * a + bz * z + baz * a * z + xpart
    if model.family == "linear":
        return lp
    if model.family == "logistic":
        return float(expit(lp))
    lam = model.baseline_cumhaz_at(_check_landmark(model, landmark))
    return float(1.0 - np.exp(-lam * np.exp(lp)))


def marginalize(
    model: FittedModel,
    a: float,
    grid,
    ds: AnalysisDataset | None = None,
    landmark: float | None = None,
) -> ArmCurve:
    """Average the conditional risk over all subjects' covariate rows,
    holding (treatment, biomarker) at (a, z) for each grid z."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise DataValidationError("empty biomarker grid")
    b0, ba, bz, baz, bx, cov_idx = _legend_pieces(model)
    X = _covariate_rows(model, ds)
    n = X.shape[0]
    k = len(model.beta)
    d = model.design

    contrib = b0 + (X @ bx if len(bx) else np.zeros(n))
    fixed = ba * a + (bz + baz * a) * grid  # (G,)
    lp = contrib[None, :] + fixed[:, None]  # (G, n)

    if model.family == "linear":
        risk = lp.mean(axis=1)
        weight = np.ones_like(lp) / n
    elif model.family == "logistic":
        p = expit(lp)
        risk = p.mean(axis=1)
        weight = p * (1.0 - p) / n
    else:
        lam = model.baseline_cumhaz_at(_check_landmark(model, landmark))
        surv = np.exp(-lam * np.exp(lp))
        risk = (1.0 - surv).mean(axis=1)
        weight = surv * lam * np.exp(lp) / n

    # gradient of the averaged risk: sum_i weight_i * w_i(a, z)
    grad = np.zeros((grid.size, k))
    wsum = weight.sum(axis=1)
    if d.has_intercept:
        grad[:, 0] = wsum
    grad[:, d.treatment_idx] = a * wsum
    grad[:, d.biomarker_idx] = grid * wsum
    grad[:, d.interaction_idx] = a * grid * wsum
    if cov_idx:
        grad[:, cov_idx] = weight @ X

    cov = model.cov_robust if model.family in ("linear", "logistic") else model.cov_model
    se = np.sqrt(np.einsum("gi,ij,gj->g", grad, cov, grad))
    return ArmCurve(arm=int(a), grid=grid, risk=risk, se=se, gradient=grad)


def risk_difference_curve(
    model: FittedModel,
    grid=None,
    ds: AnalysisDataset | None = None,
    landmark: float | None = None,
) -> RiskCurves:
    """Both arms' marginalized curves plus the control-minus-treatment
    difference, each with delta-method SEs and 95% intervals."""
    if grid is None:
        if ds is None:
            raise DataValidationError("need a grid or a dataset to derive one")
        grid = default_grid(ds)
    if model.family == "cox" and landmark is None:
        if ds is None or ds.family != "survival":
            raise DataValidationError("survival curves need a landmark time")
        landmark = km_median(ds.time, ds.event)
    arm0 = marginalize(model, 0.0, grid, ds=ds, landmark=landmark)
    arm1 = marginalize(model, 1.0, grid, ds=ds, landmark=landmark)
    diff = arm0.risk - arm1.risk
    grad_diff = arm0.gradient - arm1.gradient
    cov = model.cov_robust if model.family in ("linear", "logistic") else model.cov_model
    se_diff = np.sqrt(np.einsum("gi,ij,gj->g", grad_diff, cov, grad_diff))
    n_marg = _covariate_rows(model, ds).shape[0]
    return RiskCurves(
        grid=arm0.grid,
        risk0=arm0.risk, se0=arm0.se,
        lo0=arm0.risk - Z95 * arm0.se, hi0=arm0.risk + Z95 * arm0.se,
        risk1=arm1.risk, se1=arm1.se,
        lo1=arm1.risk - Z95 * arm1.se, hi1=arm1.risk + Z95 * arm1.se,
        diff=diff, se_diff=se_diff,
        lo_diff=diff - Z95 * se_diff, hi_diff=diff + Z95 * se_diff,
        landmark=None if model.family != "cox" else float(landmark),
        n_marginalized=n_marg,
    )


def default_grid(ds: AnalysisDataset, n_points: int = 100) -> np.ndarray:
    """Equally spaced grid spanning the observed biomarker range."""
    if n_points < 2:
        raise DataValidationError("grid needs at least 2 points")
    lo, hi = float(ds.biomarker.min()), float(ds.biomarker.max())
    if lo == hi:
        raise DataValidationError("biomarker is constant; no grid can be built")
    return np.linspace(lo, hi, n_points)
