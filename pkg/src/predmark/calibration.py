"""Calibration of predicted treatment effects against observed contrasts.

Subjects are sorted by their predicted (marginalized) risk difference and
split into G groups of near-equal size.  Within each group the observed
treatment effect is the covariate-stratified arm contrast: categorical
covariates stratify by level, continuous covariates by m quantile bins, and
strata missing either arm are excluded and counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data_model import AnalysisDataset
from .errors import DataValidationError
from .model_fit import FittedModel
from .netgain import subject_deltas
from .survival import km_event_prob_at, km_median


@dataclass(frozen=True)
class CalibrationRow:
    group: int
    n: int
    mean_biomarker: float
    mean_predicted: float
    observed: float | None
    n_excluded: int  # covariate strata missing one of the arms


@dataclass(frozen=True)
class CalibrationTable:
    rows: tuple[CalibrationRow, ...]
    n_groups: int
    m_bins: int
    landmark: float | None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["group", "n", "mean_biomarker", "mean_predicted",
                 "observed", "n_excluded_strata"]
            )
            for r in self.rows:
                writer.writerow([
                    r.group, r.n, f"{r.mean_biomarker:.10g}",
                    f"{r.mean_predicted:.10g}",
                    "" if r.observed is None else f"{r.observed:.10g}",
                    r.n_excluded,
                ])

    def to_dict(self) -> dict:
        return {
            "n_groups": self.n_groups,
            "m_bins": self.m_bins,
            "landmark": self.landmark,
            "rows": [vars(r) for r in self.rows],
        }


def observed_effect(ds: AnalysisDataset, mask: np.ndarray, landmark: float | None = None) -> float:
    """Observed control-minus-treatment contrast among ``mask`` subjects.

    Binary: difference in event proportions.  Continuous: difference in
    means.  Survival: difference in Kaplan-Meier event probabilities at the
    landmark.  Requires both arms present in the stratum.
    """
    trt = ds.treatment[mask] == 1
    if not trt.any() or trt.all():
        raise ValueError("stratum does not contain both arms")
    if ds.family == "survival":
        if landmark is None:
            raise DataValidationError("survival contrast needs a landmark time")
        t, e = ds.time[mask], ds.event[mask]
        p0 = km_event_prob_at(t[~trt], e[~trt], landmark)
        p1 = km_event_prob_at(t[trt], e[trt], landmark)
        return float(p0 - p1)
    y = ds.y[mask]
    return float(y[~trt].mean() - y[trt].mean())


def _stratum_codes(ds: AnalysisDataset, m: int) -> np.ndarray:
    """Integer stratum code per subject from all covariates jointly."""
    if not ds.covariates:
        return np.zeros(ds.n, dtype=int)
    codes = np.zeros(ds.n, dtype=int)
    radix = 1
    for cov in ds.covariates:
        if cov.kind == "categorical":
            levels = {lvl: i for i, lvl in enumerate(cov.levels)}
            col = np.array([levels[v] for v in cov.values])
            width = len(cov.levels)
        else:
            edges = np.quantile(cov.values, np.arange(1, m) / m)
            col = np.searchsorted(edges, cov.values, side="left")
            width = m
        codes = codes * radix + col
        radix = width
    return codes


def calibrate(
    model: FittedModel,
    ds: AnalysisDataset,
    n_groups: int = 5,
    m_bins: int = 4,
    landmark: float | None = None,
) -> CalibrationTable:
    """Group-level predicted vs observed treatment effects."""
    if n_groups < 2:
        raise DataValidationError("need at least 2 calibration groups")
    if ds.n < 2 * n_groups:
        raise DataValidationError("too few subjects for the requested groups")
    if ds.family == "survival" and landmark is None:
        landmark = km_median(ds.time, ds.event)

    deltas = subject_deltas(model, ds, landmark=landmark)
    order = np.argsort(deltas, kind="stable")  # ties resolved by subject index
    groups = np.array_split(order, n_groups)
    codes = _stratum_codes(ds, m_bins)

    rows = []
    for g, idx in enumerate(groups):
        mean_pred = float(deltas[idx].mean())
        mean_marker = float(ds.biomarker[idx].mean())
        in_group = np.zeros(ds.n, dtype=bool)
        in_group[idx] = True
        total = 0
        acc = 0.0
        excluded = 0
        for code in np.unique(codes[idx]):
            mask = in_group & (codes == code)
            trt = ds.treatment[mask]
            if trt.min() == trt.max():
                excluded += 1
                continue
            w = int(mask.sum())
            acc += w * observed_effect(ds, mask, landmark=landmark)
            total += w
        observed = acc / total if total else None
        rows.append(CalibrationRow(
            group=g + 1,
            n=len(idx),
            mean_biomarker=mean_marker,
            mean_predicted=mean_pred,
            observed=observed,
            n_excluded=excluded,
        ))
    return CalibrationTable(
        rows=tuple(rows),
        n_groups=n_groups,
        m_bins=m_bins,
        landmark=landmark,
    )
