"""Minimum-p-value cut-off scan with Benjamini-Hochberg adjustment.

At each candidate cut-off c the marker is dichotomized to I(Z > c) and the
family-matched model with a treatment x indicator interaction is fitted; the
candidate with the smallest interaction p-value wins.  Adjusted p-values
control the false discovery rate across the scanned candidates.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data_model import AnalysisDataset, build_design
from .errors import DataValidationError, PredmarkError
from .model_fit import CoxData, fit_linear, fit_logistic, newton_cox

__all__ = ["candidate_cutoffs", "scan", "bh_adjust", "ScanCandidate", "ScanResult"]


@dataclass(frozen=True)
class ScanCandidate:
    cutoff: float
    estimate: float
    se: float
    p_raw: float
    p_fdr: float
    converged: bool


@dataclass(frozen=True)
class ScanResult:
    candidates: tuple[ScanCandidate, ...]  # ascending cutoff, retained fits only
    chosen: ScanCandidate
    n_dropped: int

    @property
    def chosen_cutoff(self) -> float:
        return self.chosen.cutoff

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cutoff", "estimate", "se", "p_raw", "p_fdr"])
            for c in self.candidates:
                writer.writerow([
                    f"{c.cutoff:.10g}", f"{c.estimate:.10g}", f"{c.se:.10g}",
                    f"{c.p_raw:.10g}", f"{c.p_fdr:.10g}",
                ])

    def to_dict(self) -> dict:
        return {
            "chosen_cutoff": self.chosen.cutoff,
            "chosen_p_raw": self.chosen.p_raw,
            "chosen_p_fdr": self.chosen.p_fdr,
            "n_candidates": len(self.candidates),
            "n_dropped": self.n_dropped,
        }


def candidate_cutoffs(
    ds: AnalysisDataset,
    mode: str = "percentile",
    lo_frac: float = 0.10,
    hi_frac: float = 0.90,
    step: float = 0.01,
    max_candidates: int | None = None,
) -> np.ndarray:
    """Candidate cut-offs from marker quantiles or observed values.

    Percentile mode returns the quantiles from ``lo_frac`` to ``hi_frac`` at
    the given step.  Observed mode returns the unique observed values that
    leave at least ``lo_frac * n`` subjects on each side, optionally thinned
    to ``max_candidates``.
    """
    if not (0 < lo_frac < hi_frac < 1):
        raise DataValidationError("need 0 < lo_frac < hi_frac < 1")
    z = ds.biomarker
    if mode == "percentile":
        probs = np.arange(lo_frac, hi_frac + step / 2, step)
        cands = np.unique(np.quantile(z, probs))
    elif mode == "observed":
        values = np.unique(z)
        n = len(z)
        floor = lo_frac * n
        keep = [
            v for v in values
            if (z > v).sum() >= floor and (z <= v).sum() >= floor
        ]
        cands = np.asarray(keep)
        if max_candidates is not None and len(cands) > max_candidates:
            sel = np.linspace(0, len(cands) - 1, max_candidates).round().astype(int)
            cands = cands[np.unique(sel)]
    else:
        raise DataValidationError(f"unknown candidate mode {mode!r}")
    if len(cands) < 2:
        raise DataValidationError("fewer than 2 candidate cut-offs")
    return cands


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in the input order."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    k = len(p)
    order = np.argsort(p, kind="stable")
    scaled = p[order] * k / np.arange(1, k + 1)
    adj = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty(k)
    out[order] = adj
    return out


def _wald_p(estimate: float, se: float) -> float:
    if se <= 0:
        return 1.0 if estimate == 0 else 0.0
    return float(2.0 * norm.sf(abs(estimate) / se))


def _scan_cox(ds: AnalysisDataset, cands: np.ndarray):
    """All candidate fits sharing one sorted risk-set structure."""
    first = ds.with_biomarker((ds.biomarker > cands[0]).astype(float))
    design = build_design(first, intercept=False)
    data = CoxData(ds.time, ds.event, design.matrix)
    a_s = data.X_s[:, design.treatment_idx].copy()
    z_s = ds.biomarker[data.order]
    i_bio, i_int = design.biomarker_idx, design.interaction_idx

    results = []
    beta_prev = None
    for c in cands:
        ind = (z_s > c).astype(float)
        if ind.min() == ind.max():
            results.append((c, None))
            continue
        data.X_s[:, i_bio] = ind
        data.X_s[:, i_int] = a_s * ind
        try:
            beta, cov, conv = newton_cox(data, beta0=beta_prev, warn=False)
        except PredmarkError:
            results.append((c, None))
            beta_prev = None
            continue
        if not conv.converged:
            results.append((c, None))
            beta_prev = None
            continue
        beta_prev = beta
        est = float(beta[i_int])
        se = float(np.sqrt(cov[i_int, i_int]))
        results.append((c, (est, se)))
    return results


def _scan_glm(ds: AnalysisDataset, cands: np.ndarray):
    fit = fit_logistic if ds.family == "binary" else fit_linear
    results = []
    for c in cands:
        ind = (ds.biomarker > c).astype(float)
        if ind.min() == ind.max():
            results.append((c, None))
            continue
        try:
            design = build_design(ds.with_biomarker(ind), intercept=True)
            model = fit(design, ds.y)
        except PredmarkError:
            results.append((c, None))
            continue
        if not model.convergence.converged:
            results.append((c, None))
            continue
        j = design.interaction_idx
        est = float(model.beta[j])
        se = float(np.sqrt(model.cov_model[j, j]))
        results.append((c, (est, se)))
    return results


def scan(
    ds: AnalysisDataset,
    candidates=None,
    mode: str = "percentile",
) -> ScanResult:
    """Fit the dichotomized-interaction model at every candidate cut-off.

    Candidates are sorted internally, so the result does not depend on the
    order they were supplied in.  Candidates whose fit fails or does not
    converge are dropped with a warning.  Ties in the minimum p-value go to
    the smaller cut-off.
    """
    if candidates is None:
        candidates = candidate_cutoffs(ds, mode=mode)
    cands = np.sort(np.asarray(candidates, dtype=float))
    if len(cands) < 1:
        raise DataValidationError("no candidate cut-offs supplied")

    if ds.family == "survival":
        raw = _scan_cox(ds, cands)
    else:
        raw = _scan_glm(ds, cands)

    kept = [(c, est_se) for c, est_se in raw if est_se is not None]
    n_dropped = len(raw) - len(kept)
    if n_dropped:
        warnings.warn(f"{n_dropped} candidate fit(s) failed and were dropped", stacklevel=2)
    if not kept:
        raise DataValidationError("no candidate cut-off produced a usable fit")

    p_raw = np.array([_wald_p(est, se) for _, (est, se) in kept])
    p_fdr = bh_adjust(p_raw)
    rows = tuple(
        ScanCandidate(
            cutoff=float(c), estimate=est, se=se,
            p_raw=float(pr), p_fdr=float(pf), converged=True,
        )
        for (c, (est, se)), pr, pf in zip(kept, p_raw, p_fdr)
    )
    best = min(range(len(rows)), key=lambda i: (rows[i].p_raw, rows[i].cutoff))
    return ScanResult(candidates=rows, chosen=rows[best], n_dropped=n_dropped)
