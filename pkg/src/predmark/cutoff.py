"""Biomarker cut-off estimation and threshold classification.

Three estimators for the marker value where the arm risk difference crosses
zero: the coefficient formula -b_treatment / b_interaction, linear
interpolation of the marginalized curves at the bracketing grid points, and
root finding on the marginalized difference.  Threshold classification
reports the marker ranges where each arm is predicted to do better.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateCrossingError, NoInteractionError, NumericalError
from .marginal_risk import RiskCurves
from .model_fit import FittedModel

BETA3_EPS = 1e-12


@dataclass(frozen=True)
class CutoffReport:
    theoretical: float | None
    positive_threshold: float | None
    negative_threshold: float | None
    method: str | None  # "interpolation" | "formula" | "root"
    within_range: bool
    se_formula: float | None
    predicted_risk_at_cut: float | None
    direction: int  # sign of the risk difference at the smallest grid value
    n_sign_changes: int = 0

    def to_dict(self) -> dict:
        return {
            "theoretical": self.theoretical,
            "positive_threshold": self.positive_threshold,
            "negative_threshold": self.negative_threshold,
            "method": self.method,
            "within_range": self.within_range,
            "se_formula": self.se_formula,
            "predicted_risk_at_cut": self.predicted_risk_at_cut,
            "direction": self.direction,
            "n_sign_changes": self.n_sign_changes,
        }


def formula_cutoff(beta1: float, beta3: float) -> float:
    """-beta1/beta3: equal linear predictors for the two arms."""
    if abs(beta3) <= BETA3_EPS:
        raise NoInteractionError("interaction coefficient is zero; no cut-off")
    return -beta1 / beta3


def interpolation_cutoff(curves: RiskCurves) -> tuple[float, float]:
    """Intersect the per-arm secant lines on the grid interval where the
    risk difference changes sign.  Returns (z_cut, predicted risk there)."""
    z, d = curves.grid, curves.diff
    idx = _first_crossing(d)
    if idx is None:
        raise NumericalError("risk difference does not change sign on the grid")
    i = idx
    dz = z[i + 1] - z[i]
    b1 = (curves.risk1[i + 1] - curves.risk1[i]) / dz  # treated slope
    b0 = curves.risk1[i] - b1 * z[i]
    r1 = (curves.risk0[i + 1] - curves.risk0[i]) / dz  # control slope
    r0 = curves.risk0[i] - r1 * z[i]
    if abs(r1 - b1) <= 1e-300 or not np.isfinite((b0 - r0) / (r1 - b1)):
        raise DegenerateCrossingError("arm curves are parallel on the crossing interval")
    z_cut = (b0 - r0) / (r1 - b1)
    return float(z_cut), float(b0 + b1 * z_cut)


def _first_crossing(diff: np.ndarray) -> int | None:
    """Index i of the first interval where diff changes sign (or hits 0)."""
    for i in range(len(diff) - 1):
        if diff[i] == 0.0 or diff[i] * diff[i + 1] < 0:
            return i
    return None


def _sign_changes(diff: np.ndarray) -> list[int]:
    s = np.sign(diff)
    nz = s != 0
    compact = s[nz]
    return list(np.nonzero(compact[1:] * compact[:-1] < 0)[0])


def root_cutoff(diff_fn, lo: float, hi: float) -> float:
    """Root of the risk difference on [lo, hi] via Brent's method."""
    flo, fhi = diff_fn(lo), diff_fn(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if flo * fhi > 0:
        raise NumericalError("risk difference has no sign change over [lo, hi]")
    return float(brentq(diff_fn, lo, hi, xtol=1e-8 * (hi - lo), rtol=8.9e-16))


def classify_thresholds(
    curves: RiskCurves,
    formula_value: float | None = None,
    use_ci: bool = False,
) -> CutoffReport:
    """Positive / negative / theoretical thresholds from the grid curves.

    The sign of the control-minus-treatment difference at the smallest
    marker value orients the classification.  With ``use_ci`` the signs are
    taken from the difference's confidence band (positive only where the
    band excludes zero from below, negative where it excludes from above).
    """
    z = curves.grid
    if use_ci:
        pos_mask = curves.lo_diff > 0
        neg_mask = curves.hi_diff < 0
    else:
        pos_mask = curves.diff > 0
        neg_mask = curves.diff < 0

    lead = curves.diff[np.nonzero(curves.diff)[0]]
    s = int(np.sign(lead[0])) if lead.size else 0

    positive = negative = None
    if s >= 0:
        if pos_mask.any():
            positive = float(z[pos_mask].max())
        if neg_mask.any():
            negative = float(z[neg_mask].min())
    else:
        if pos_mask.any():
            positive = float(z[pos_mask].min())
        if neg_mask.any():
            negative = float(z[neg_mask].max())

    changes = _sign_changes(curves.diff)
    if len(changes) > 1:
        warnings.warn(
            "risk difference changes sign more than once on the grid "
            f"(intervals {changes}); reporting the first crossing",
            stacklevel=2,
        )

    theoretical = pred = None
    method = None
    if _first_crossing(curves.diff) is not None:
        theoretical, pred = interpolation_cutoff(curves)
        method = "interpolation"
    elif formula_value is not None:
        theoretical = float(formula_value)
        method = "formula"
    within = theoretical is not None and z.min() < theoretical < z.max()
    return CutoffReport(
        theoretical=theoretical,
        positive_threshold=positive,
        negative_threshold=negative,
        method=method,
        within_range=bool(within),
        se_formula=None,
        predicted_risk_at_cut=pred,
        direction=s,
        n_sign_changes=len(changes),
    )


def cutoff_se(model: FittedModel) -> float:
    """Delta-method SE of -b_treatment/b_interaction from the model covariance."""
    d = model.design
    i1, i3 = d.treatment_idx, d.interaction_idx
    b1, b3 = float(model.beta[i1]), float(model.beta[i3])
    if abs(b3) <= BETA3_EPS:
        raise NoInteractionError("interaction coefficient is zero; SE undefined")
    s11 = model.cov_model[i1, i1]
    s33 = model.cov_model[i3, i3]
    s13 = model.cov_model[i1, i3]
    var = s11 / b3**2 + b1**2 * s33 / b3**4 - 2.0 * b1 * s13 / b3**3
    return float(np.sqrt(max(var, 0.0)))
