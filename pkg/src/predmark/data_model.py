"""Datasets, CSV ingestion, design matrices, and biomarker rescaling.

The central value type is :class:`AnalysisDataset`: one row per subject with
a 0/1 treatment arm, a continuous biomarker, optional covariates, and an
outcome that is continuous, binary, or survival (time, event).  Datasets are
immutable after construction and validated eagerly; missing values are
rejected, never imputed.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .errors import DataValidationError

FAMILIES = ("continuous", "binary", "survival")


@dataclass(frozen=True)
class OutcomeSpec:
    """What kind of outcome a dataset carries and how "worse" is oriented.

    ``worse_direction`` is "higher" (default) or "lower".  With "lower",
    binary outcomes are flipped (risk becomes 1 - P) and continuous outcomes
    are negated at ingestion, so downstream code can always treat a higher
    predicted value as the worse outcome.  ``normal_score`` optionally maps a
    continuous outcome to its empirical normal score before fitting.
    """

    family: str
    worse_direction: str = "higher"
    landmark_time: float | None = None
    normal_score: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataValidationError(
                f"unknown outcome family {self.family!r}; expected one of {FAMILIES}"
            )
        if self.worse_direction not in ("higher", "lower"):
            raise DataValidationError(
                "worse_direction must be 'higher' or 'lower'"
            )
        if self.family == "survival":
            if self.landmark_time is not None and self.landmark_time <= 0:
                raise DataValidationError("landmark_time must be positive")
            if self.worse_direction == "lower":
                raise DataValidationError(
                    "worse_direction does not apply to survival outcomes"
                )
        elif self.landmark_time is not None:
            raise DataValidationError(
                "landmark_time is only meaningful for survival outcomes"
            )
        if self.normal_score and self.family != "continuous":
            raise DataValidationError(
                "normal_score applies to continuous outcomes only"
            )


@dataclass(frozen=True)
class Covariate:
    """A single covariate column: continuous values or categorical codes."""

    name: str
    kind: str  # "continuous" | "categorical"
    values: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise DataValidationError(f"unknown covariate kind {self.kind!r}")
        if self.kind == "categorical" and not self.levels:
            object.__setattr__(
                self, "levels", tuple(sorted(set(str(v) for v in self.values)))
            )


@dataclass(frozen=True)
class AnalysisDataset:
    """Validated per-subject data for a two-arm trial with one biomarker."""

    subject_id: np.ndarray
    treatment: np.ndarray
    biomarker: np.ndarray
    covariates: tuple[Covariate, ...]
    outcome_spec: OutcomeSpec
    y: np.ndarray | None = None
    time: np.ndarray | None = None
    event: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.subject_id)
        arrays = {"treatment": self.treatment, "biomarker": self.biomarker}
        fam = self.outcome_spec.family
        if fam == "survival":
            if self.time is None or self.event is None:
                raise DataValidationError("survival outcome requires time and event")
            arrays["time"] = self.time
            arrays["event"] = self.event
        else:
            if self.y is None:
                raise DataValidationError(f"{fam} outcome requires y")
            arrays["y"] = self.y
        for name, arr in arrays.items():
            if len(arr) != n:
                raise DataValidationError(f"column {name!r} has length {len(arr)}, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"non-finite value in column {name!r}")
        for cov in self.covariates:
            if len(cov.values) != n:
                raise DataValidationError(f"covariate {cov.name!r} has wrong length")
            if cov.kind == "continuous" and not np.all(np.isfinite(cov.values)):
                raise DataValidationError(f"non-finite value in covariate {cov.name!r}")

        if not np.all(np.isin(self.treatment, (0, 1))):
            raise DataValidationError("treatment outside {0,1}")
        if self.treatment.sum() == 0 or self.treatment.sum() == n:
            raise DataValidationError("both treatment arms must be non-empty")
        if fam == "binary" and not np.all(np.isin(self.y, (0, 1))):
            raise DataValidationError("binary outcome outside {0,1}")
        if fam == "survival":
            if np.any(self.time <= 0):
                raise DataValidationError("survival times must be positive")
            if not np.all(np.isin(self.event, (0, 1))):
                raise DataValidationError("event indicator outside {0,1}")
            lm = self.outcome_spec.landmark_time
            if lm is not None and not (self.time.min() <= lm <= self.time.max()):
                raise DataValidationError(
                    f"landmark_time {lm} outside observed follow-up "
                    f"[{self.time.min():g}, {self.time.max():g}]"
                )
        for arr in (self.subject_id, self.treatment, self.biomarker,
                    self.y, self.time, self.event):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.subject_id)

    @property
    def family(self) -> str:
        return self.outcome_spec.family

    def take(self, indices) -> "AnalysisDataset":
        """Row subset (used by the bootstrap); re-validates invariants."""
        idx = np.asarray(indices)
        covs = tuple(
            Covariate(c.name, c.kind, c.values[idx].copy(), c.levels)
            for c in self.covariates
        )
        return AnalysisDataset(
            subject_id=self.subject_id[idx].copy(),
            treatment=self.treatment[idx].copy(),
            biomarker=self.biomarker[idx].copy(),
            covariates=covs,
            outcome_spec=self.outcome_spec,
            y=None if self.y is None else self.y[idx].copy(),
            time=None if self.time is None else self.time[idx].copy(),
            event=None if self.event is None else self.event[idx].copy(),
        )

    def with_biomarker(self, biomarker: np.ndarray) -> "AnalysisDataset":
        """Same subjects and outcomes, different marker column."""
        return replace(self, biomarker=np.asarray(biomarker, dtype=float).copy())


@dataclass(frozen=True)
class ColumnMap:
    """Maps logical roles to CSV column names."""

    treatment: str
    biomarker: str
    outcome: str | None = None
    time: str | None = None
    event: str | None = None
    subject_id: str | None = None
    covariates: tuple[str, ...] = ()


@dataclass(frozen=True)
class DesignMatrix:
    """Model matrix with columns (intercept?, A, Z, A*Z, covariates...).

    The index map identifies the treatment, biomarker, and interaction
    columns so that downstream code can overwrite them when predicting at
    counterfactual (arm, biomarker) pairs.
    """

    matrix: np.ndarray
    columns: tuple[str, ...]
    treatment_idx: int
    biomarker_idx: int
    interaction_idx: int
    has_intercept: bool

    def __post_init__(self):
        inter = self.matrix[:, self.interaction_idx]
        prod = self.matrix[:, self.treatment_idx] * self.matrix[:, self.biomarker_idx]
        if not np.allclose(inter, prod):
            raise DataValidationError("interaction column is not treatment * biomarker")
        self.matrix.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    @property
    def covariate_idx(self) -> tuple[int, ...]:
        special = {self.treatment_idx, self.biomarker_idx, self.interaction_idx}
        if self.has_intercept:
            special.add(0)
        return tuple(i for i in range(self.k) if i not in special)

    def with_arm_and_marker(self, a: float, z: float) -> np.ndarray:
        """Copy of the matrix with treatment and biomarker held fixed."""
        out = self.matrix.copy()
        out[:, self.treatment_idx] = a
        out[:, self.biomarker_idx] = z
        out[:, self.interaction_idx] = a * z
        return out


def _parse_numeric(raw: str, column: str, row: int) -> float:
    s = raw.strip()
    if s == "":
        raise DataValidationError(f"missing value in column {column!r} at data row {row}")
    try:
        return float(s)
    except ValueError:
        raise DataValidationError(
            f"non-numeric value {raw!r} in column {column!r} at data row {row}"
        ) from None


def load_csv(path, schema: ColumnMap, outcome_spec: OutcomeSpec) -> AnalysisDataset:
    """Read a UTF-8 comma-separated file with a header row into a dataset.

    Numeric roles (treatment, biomarker, outcome, time, event) must parse as
    numbers in every row.  A covariate column is continuous when all its
    cells parse as numbers and categorical otherwise; categorical levels are
    recorded as observed.  Any empty cell in a mapped column is an error.
    """
    fam = outcome_spec.family
    needed = [schema.treatment, schema.biomarker]
    if fam == "survival":
        if schema.time is None or schema.event is None:
            raise DataValidationError("survival outcome needs time and event columns")
        needed += [schema.time, schema.event]
    else:
        if schema.outcome is None:
            raise DataValidationError(f"{fam} outcome needs an outcome column")
        needed.append(schema.outcome)
    if schema.subject_id is not None:
        needed.append(schema.subject_id)
    needed += list(schema.covariates)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in needed:
            if col not in header:
                raise DataValidationError(f"missing column {col!r} in {path}")
        rows = list(reader)
    if not rows:
        raise DataValidationError(f"no data rows in {path}")

    def numeric_column(col):
        return np.array(
            [_parse_numeric(r[col] if r[col] is not None else "", col, i + 1)
             for i, r in enumerate(rows)]
        )

    treatment = numeric_column(schema.treatment)
    if not np.all(np.isin(treatment, (0.0, 1.0))):
        raise DataValidationError(
            f"treatment outside {{0,1}} in column {schema.treatment!r}"
        )
    biomarker = numeric_column(schema.biomarker)

    if schema.subject_id is not None:
        subject_id = np.array([r[schema.subject_id].strip() for r in rows], dtype=object)
    else:
        subject_id = np.array([str(i + 1) for i in range(len(rows))], dtype=object)

    covariates = []
    for col in schema.covariates:
        raw = [r[col] if r[col] is not None else "" for r in rows]
        for i, cell in enumerate(raw):
            if cell.strip() == "":
                raise DataValidationError(
                    f"missing value in column {col!r} at data row {i + 1}"
                )
        try:
            values = np.array([float(c) for c in raw])
            kind = "continuous"
            levels: tuple[str, ...] = ()
        except ValueError:
            values = np.array([c.strip() for c in raw], dtype=object)
            kind = "categorical"
            levels = tuple(sorted(set(values)))
        covariates.append(Covariate(col, kind, values, levels))

    y = time = event = None
    if fam == "survival":
        time = numeric_column(schema.time)
        event = numeric_column(schema.event)
        if not np.all(np.isin(event, (0.0, 1.0))):
            raise DataValidationError(
                f"event indicator outside {{0,1}} in column {schema.event!r}"
            )
    else:
        y = numeric_column(schema.outcome)
        if fam == "binary":
            if not np.all(np.isin(y, (0.0, 1.0))):
                raise DataValidationError(
                    f"binary outcome outside {{0,1}} in column {schema.outcome!r}"
                )
            if outcome_spec.worse_direction == "lower":
                y = 1.0 - y
        else:
            if outcome_spec.worse_direction == "lower":
                y = -y
            if outcome_spec.normal_score:
                y = normal_scores(y)

    return AnalysisDataset(
        subject_id=subject_id,
        treatment=treatment.astype(int),
        biomarker=biomarker,
        covariates=tuple(covariates),
        outcome_spec=outcome_spec,
        y=y,
        time=time,
        event=event,
    )


def build_design(ds: AnalysisDataset, intercept: bool = True) -> DesignMatrix:
    """Assemble (intercept?, A, Z, A*Z, covariates...) for ``ds``.

    Categorical covariates are one-hot encoded dropping the first level in
    sorted order.  Columns that are constant after encoding carry no
    information and are dropped with a warning.
    """
    cols: list[np.ndarray] = []
    names: list[str] = []
    if intercept:
        cols.append(np.ones(ds.n))
        names.append("(intercept)")
    base = len(cols)
    a = ds.treatment.astype(float)
    z = ds.biomarker.astype(float)
    cols += [a, z, a * z]
    names += ["treatment", "biomarker", "treatment:biomarker"]

    for cov in ds.covariates:
        if cov.kind == "continuous":
            encoded = [(cov.name, cov.values.astype(float))]
        else:
            encoded = [
                (f"{cov.name}={lvl}", (cov.values == lvl).astype(float))
                for lvl in cov.levels[1:]
            ]
        for name, col in encoded:
            if np.ptp(col) == 0:
                warnings.warn(
                    f"covariate column {name!r} is constant and was dropped",
                    stacklevel=2,
                )
                continue
            cols.append(col)
            names.append(name)

    return DesignMatrix(
        matrix=np.column_stack(cols),
        columns=tuple(names),
        treatment_idx=base,
        biomarker_idx=base + 1,
        interaction_idx=base + 2,
        has_intercept=intercept,
    )


def percentile_rescale(z: np.ndarray) -> np.ndarray:
    """Map values to rank/(n+1) with midranks for ties.

    The result lies strictly inside (0,1) and preserves order, which is what
    the Beta-form threshold prior requires of its support.
    """
    z = np.asarray(z, dtype=float)
    if z.size < 2:
        raise DataValidationError("percentile rescaling needs at least 2 values")
    return rankdata(z, method="average") / (z.size + 1)


def marker_quantile(z: np.ndarray, prob) -> np.ndarray | float:
    """Inverse of :func:`percentile_rescale`: empirical quantile at ``prob``.

    Uses the Weibull plotting position k/(n+1) so that round-tripping a
    rescaled value recovers the original order statistic.
    """
    return np.quantile(np.asarray(z, dtype=float), prob, method="weibull")


def normal_scores(y: np.ndarray) -> np.ndarray:
    """Empirical normal scores: Phi^{-1}(rank/(n+1))."""
    from scipy.stats import norm

    return norm.ppf(percentile_rescale(y))
