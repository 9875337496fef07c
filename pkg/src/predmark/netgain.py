"""Net-gain summary of a biomarker-guided treatment rule, and marker
comparison by bootstrap.

The summary evaluates the marginalized risk difference Delta(Z_i) at every
subject's observed marker value.  Biomarker-negative subjects (those the
rule would not treat) contribute the average benefit of withholding
treatment; the net gain is that benefit times the negative fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import AnalysisDataset
from .errors import NumericalError, PredmarkError
from .marginal_risk import marginalize
from .model_fit import FittedModel, fit_dataset
from .survival import km_median


@dataclass(frozen=True)
class DeltaSignRule:
    """Treat exactly the subjects with predicted benefit (Delta > 0)."""

    @property
    def label(self) -> str:
        return "delta-sign"


@dataclass(frozen=True)
class FixedCutoffRule:
    """Dichotomize at ``z_cut``; ``negative_side`` names the no-treatment side."""

    z_cut: float
    negative_side: str = "above"  # "above" | "below"

    def __post_init__(self):
        if self.negative_side not in ("above", "below"):
            raise ValueError("negative_side must be 'above' or 'below'")
        if not np.isfinite(self.z_cut):
            raise ValueError("z_cut must be finite")

    @property
    def label(self) -> str:
        return f"cutoff({self.z_cut:g},{self.negative_side})"


@dataclass(frozen=True)
class BootstrapSummary:
    se: float
    ci_lo: float
    ci_hi: float
    reps: int
    seed: int | None
    n_failed: int = 0


@dataclass(frozen=True)
class NetGainSummary:
    b_neg: float
    p_neg: float
    theta: float
    rule: str
    n_neg: int
    empty_negative: bool
    bootstrap: BootstrapSummary | None = None

    def to_dict(self) -> dict:
        out = {
            "b_neg": self.b_neg,
            "p_neg": self.p_neg,
            "theta": self.theta,
            "rule": self.rule,
            "n_neg": self.n_neg,
            "empty_negative": self.empty_negative,
        }
        if self.bootstrap is not None:
            out["bootstrap"] = vars(self.bootstrap)
        return out


def subject_deltas(
    model: FittedModel,
    ds: AnalysisDataset,
    landmark: float | None = None,
) -> np.ndarray:
    """Marginalized risk difference Delta(Z_i) at each subject's marker."""
    if model.family == "cox" and landmark is None:
        landmark = km_median(ds.time, ds.event)
    arm0 = marginalize(model, 0.0, ds.biomarker, ds=ds, landmark=landmark)
    arm1 = marginalize(model, 1.0, ds.biomarker, ds=ds, landmark=landmark)
    return arm0.risk - arm1.risk


def net_gain(
    model: FittedModel,
    ds: AnalysisDataset,
    rule: DeltaSignRule | FixedCutoffRule = DeltaSignRule(),
    landmark: float | None = None,
    deltas: np.ndarray | None = None,
) -> NetGainSummary:
    """Average no-treatment benefit among rule-negatives times their share.

    ``deltas`` can be supplied when the per-subject risk differences were
    already computed (the simulation harness reuses them across rules).
    """
    if deltas is None:
        deltas = subject_deltas(model, ds, landmark=landmark)
    if isinstance(rule, DeltaSignRule):
        negative = deltas < 0
    else:
        if rule.negative_side == "above":
            negative = ds.biomarker > rule.z_cut
        else:
            negative = ds.biomarker < rule.z_cut
    n_neg = int(negative.sum())
    p_neg = n_neg / len(deltas)
    b_neg = float(np.mean(-deltas[negative])) if n_neg else 0.0
    return NetGainSummary(
        b_neg=b_neg,
        p_neg=float(p_neg),
        theta=float(b_neg * p_neg),
        rule=rule.label,
        n_neg=n_neg,
        empty_negative=n_neg == 0,
    )


@dataclass(frozen=True)
class MarkerComparison:
    theta_a: float
    theta_b: float
    delta_theta: float
    se: float
    ci_lo: float
    ci_hi: float
    theta_a_se: float
    theta_a_ci: tuple[float, float]
    theta_b_se: float
    theta_b_ci: tuple[float, float]
    reps_used: int
    n_failed: int
    seed: int | None

    def to_dict(self) -> dict:
        return {
            "theta_a": self.theta_a,
            "theta_b": self.theta_b,
            "delta_theta": self.delta_theta,
            "se": self.se,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "theta_a_se": self.theta_a_se,
            "theta_a_ci": list(self.theta_a_ci),
            "theta_b_se": self.theta_b_se,
            "theta_b_ci": list(self.theta_b_ci),
            "reps_used": self.reps_used,
            "n_failed": self.n_failed,
            "seed": self.seed,
        }


def _theta_for(ds: AnalysisDataset, rule) -> float:
    model = fit_dataset(ds)
    return net_gain(model, ds, rule=rule).theta


def bootstrap_compare(
    model_a: FittedModel,
    model_b: FittedModel,
    ds_a: AnalysisDataset,
    ds_b: AnalysisDataset,
    reps: int = 1000,
    seed: int | None = None,
    rule=DeltaSignRule(),
) -> MarkerComparison:
    """Pairs-bootstrap comparison of two markers measured on the same
    subjects: resample rows, refit both models (landmark included), and
    summarize Theta_A - Theta_B with a percentile interval."""
    if reps < 100:
        raise ValueError("bootstrap comparison needs at least 100 replicates")
    if ds_a.n != ds_b.n:
        raise ValueError("both markers must be measured on the same subjects")
    n = ds_a.n
    theta_a = net_gain(model_a, ds_a, rule=rule).theta
    theta_b = net_gain(model_b, ds_b, rule=rule).theta

    rng = np.random.default_rng(seed)
    ta, tb = [], []
    failed = 0
    for _ in range(reps):
        idx = rng.integers(0, n, n)
        try:
            ta.append(_theta_for(ds_a.take(idx), rule))
            tb.append(_theta_for(ds_b.take(idx), rule))
        except PredmarkError:
            failed += 1
    if failed > 0.10 * reps:
        raise NumericalError(
            f"{failed}/{reps} bootstrap replicates failed to refit"
        )
    ta = np.asarray(ta)
    tb = np.asarray(tb)
    dt = ta - tb
    lo, hi = np.percentile(dt, [2.5, 97.5])
    return MarkerComparison(
        theta_a=theta_a,
        theta_b=theta_b,
        delta_theta=theta_a - theta_b,
        se=float(dt.std(ddof=1)),
        ci_lo=float(lo),
        ci_hi=float(hi),
        theta_a_se=float(ta.std(ddof=1)),
        theta_a_ci=tuple(float(v) for v in np.percentile(ta, [2.5, 97.5])),
        theta_b_se=float(tb.std(ddof=1)),
        theta_b_ci=tuple(float(v) for v in np.percentile(tb, [2.5, 97.5])),
        reps_used=reps - failed,
        n_failed=failed,
        seed=seed,
    )
