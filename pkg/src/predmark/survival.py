"""Nonparametric survival utilities: Kaplan-Meier and Nelson-Aalen.

Small, self-contained estimators used for landmark defaults, observed
treatment effects in calibration, and baseline-hazard cross-checks.
"""

from __future__ import annotations

import numpy as np

from .errors import DataValidationError


def _event_table(time, event):
    """Distinct event times with event counts and numbers at risk."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    order = np.argsort(time, kind="stable")
    t, d = time[order], event[order]
    utimes, start = np.unique(t, return_index=True)
    n = len(t)
    at_risk = n - start
    deaths = np.add.reduceat(d.astype(float), start)
    keep = deaths > 0
    return utimes[keep], deaths[keep], at_risk[keep]


def kaplan_meier(time, event):
    """Event times and the Kaplan-Meier survival estimate just after each.

    Returns (times, survival); survival is right-continuous with S(0)=1.
    """
    t, d, r = _event_table(time, event)
    surv = np.cumprod(1.0 - d / r)
    return t, surv


def km_survival_at(time, event, t0: float) -> float:
    """S(t0) from the Kaplan-Meier curve (carried forward past the last event)."""
    times, surv = kaplan_meier(time, event)
    idx = np.searchsorted(times, t0, side="right") - 1
    return 1.0 if idx < 0 else float(surv[idx])


def km_event_prob_at(time, event, t0: float) -> float:
    """1 - S(t0), the cumulative event probability by t0."""
    return 1.0 - km_survival_at(time, event, t0)


def km_median(time, event) -> float:
    """Smallest event time where the KM survival estimate drops to <= 0.5."""
    times, surv = kaplan_meier(time, event)
    below = np.nonzero(surv <= 0.5)[0]
    if len(below) == 0:
        raise DataValidationError(
            "median survival not reached; supply a landmark time explicitly"
        )
    return float(times[below[0]])


def nelson_aalen(time, event):
    """Event times and the Nelson-Aalen cumulative hazard estimate."""
    t, d, r = _event_table(time, event)
    return t, np.cumsum(d / r)
