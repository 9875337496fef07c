import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predmark.data_model import (
    AnalysisDataset,
    ColumnMap,
    Covariate,
    OutcomeSpec,
    build_design,
    load_csv,
    marker_quantile,
    percentile_rescale,
)
from predmark.errors import DataValidationError

from .conftest import ids


VALID_CSV = """id,arm,z,age,time,event
1,0,1.2,55,3.1,1
2,1,0.7,61,5.0,0
3,0,2.2,47,1.4,1
4,1,1.9,70,2.8,1
"""

SURV = OutcomeSpec("survival")
SCHEMA = ColumnMap(treatment="arm", biomarker="z", time="time", event="event",
                   subject_id="id", covariates=("age",))


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_well_formed_file(self, tmp_path):
        ds = load_csv(write(tmp_path, VALID_CSV), SCHEMA, SURV)
        assert ds.n == 4
        assert list(ds.subject_id) == ["1", "2", "3", "4"]
        assert ds.covariates[0].kind == "continuous"
        np.testing.assert_allclose(ds.biomarker, [1.2, 0.7, 2.2, 1.9])

    def test_missing_biomarker_cell(self, tmp_path):
        bad = VALID_CSV.replace("3,0,2.2,47", "3,0,,47")
        with pytest.raises(DataValidationError, match="missing value"):
            load_csv(write(tmp_path, bad), SCHEMA, SURV)

    def test_treatment_outside_01(self, tmp_path):
        bad = VALID_CSV.replace("2,1,0.7", "2,2,0.7")
        with pytest.raises(DataValidationError, match="treatment outside"):
            load_csv(write(tmp_path, bad), SCHEMA, SURV)

    def test_event_outside_01(self, tmp_path):
        bad = VALID_CSV.replace("5.0,0", "5.0,2")
        with pytest.raises(DataValidationError, match="event indicator"):
            load_csv(write(tmp_path, bad), SCHEMA, SURV)

    def test_non_numeric_cell(self, tmp_path):
        bad = VALID_CSV.replace("0.7", "abc")
        with pytest.raises(DataValidationError, match="non-numeric"):
            load_csv(write(tmp_path, bad), SCHEMA, SURV)

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataValidationError, match="missing column"):
            load_csv(
                write(tmp_path, VALID_CSV),
                ColumnMap(treatment="arm", biomarker="nope", time="time", event="event"),
                SURV,
            )

    def test_categorical_covariate_levels(self, tmp_path):
        text = "arm,z,site,y\n0,1,a,0\n1,2,b,1\n0,3,c,0\n1,4,a,1\n"
        ds = load_csv(
            write(tmp_path, text),
            ColumnMap(treatment="arm", biomarker="z", outcome="y", covariates=("site",)),
            OutcomeSpec("binary"),
        )
        assert ds.covariates[0].kind == "categorical"
        assert ds.covariates[0].levels == ("a", "b", "c")

    def test_lower_is_worse_flips_binary(self, tmp_path):
        text = "arm,z,y\n0,1,1\n1,2,0\n0,3,1\n1,4,0\n"
        schema = ColumnMap(treatment="arm", biomarker="z", outcome="y")
        ds = load_csv(write(tmp_path, text), schema,
                      OutcomeSpec("binary", worse_direction="lower"))
        np.testing.assert_allclose(ds.y, [0, 1, 0, 1])

    def test_lower_is_worse_negates_continuous(self, tmp_path):
        text = "arm,z,y\n0,1,1.5\n1,2,-0.5\n0,3,2.0\n1,4,0.0\n"
        schema = ColumnMap(treatment="arm", biomarker="z", outcome="y")
        ds = load_csv(write(tmp_path, text), schema,
                      OutcomeSpec("continuous", worse_direction="lower"))
        np.testing.assert_allclose(ds.y, [-1.5, 0.5, -2.0, 0.0])


class TestOutcomeSpec:
    def test_landmark_only_for_survival(self):
        with pytest.raises(DataValidationError):
            OutcomeSpec("binary", landmark_time=2.0)

    def test_landmark_within_followup(self):
        with pytest.raises(DataValidationError, match="landmark"):
            AnalysisDataset(
                subject_id=ids(4), treatment=np.array([0, 1, 0, 1]),
                biomarker=np.arange(4.0), covariates=(),
                outcome_spec=OutcomeSpec("survival", landmark_time=99.0),
                time=np.array([1.0, 2.0, 3.0, 4.0]),
                event=np.array([1.0, 0.0, 1.0, 1.0]),
            )

    def test_one_armed_dataset_rejected(self):
        with pytest.raises(DataValidationError, match="both treatment arms"):
            AnalysisDataset(
                subject_id=ids(3), treatment=np.array([1, 1, 1]),
                biomarker=np.arange(3.0), covariates=(),
                outcome_spec=OutcomeSpec("binary"), y=np.array([0.0, 1.0, 0.0]),
            )


class TestBuildDesign:
    def test_column_layout(self):
        ds = AnalysisDataset(
            subject_id=ids(2), treatment=np.array([1, 0]),
            biomarker=np.array([2.0, 3.0]),
            covariates=(Covariate("x", "continuous", np.array([0.5, 1.5])),),
            outcome_spec=OutcomeSpec("binary"), y=np.array([1.0, 0.0]),
        )
        d = build_design(ds)
        np.testing.assert_allclose(d.matrix[0], [1, 1, 2, 2, 0.5])
        np.testing.assert_allclose(d.matrix[1], [1, 0, 3, 0, 1.5])
        assert d.columns[:4] == ("(intercept)", "treatment", "biomarker",
                                 "treatment:biomarker")

    def test_no_intercept_for_cox(self):
        ds = AnalysisDataset(
            subject_id=ids(2), treatment=np.array([1, 0]),
            biomarker=np.array([2.0, 3.0]), covariates=(),
            outcome_spec=OutcomeSpec("survival"),
            time=np.array([1.0, 2.0]), event=np.array([1.0, 1.0]),
        )
        d = build_design(ds, intercept=False)
        assert d.k == 3 and not d.has_intercept

    def test_categorical_one_hot_drops_reference(self):
        vals = np.array(["b", "c", "a", "b"], dtype=object)
        ds = AnalysisDataset(
            subject_id=ids(4), treatment=np.array([0, 1, 0, 1]),
            biomarker=np.arange(4.0),
            covariates=(Covariate("site", "categorical", vals),),
            outcome_spec=OutcomeSpec("binary"), y=np.array([0.0, 1.0, 1.0, 0.0]),
        )
        d = build_design(ds)
        assert d.columns[4:] == ("site=b", "site=c")
        np.testing.assert_allclose(d.matrix[:, 4], [1, 0, 0, 1])
        np.testing.assert_allclose(d.matrix[:, 5], [0, 1, 0, 0])

    def test_constant_column_dropped_with_warning(self):
        ds = AnalysisDataset(
            subject_id=ids(4), treatment=np.array([0, 1, 0, 1]),
            biomarker=np.arange(4.0),
            covariates=(Covariate("flat", "continuous", np.ones(4)),),
            outcome_spec=OutcomeSpec("binary"), y=np.array([0.0, 1.0, 1.0, 0.0]),
        )
        with pytest.warns(UserWarning, match="constant"):
            d = build_design(ds)
        assert "flat" not in d.columns

    def test_row_order_preserved(self):
        ds = AnalysisDataset(
            subject_id=ids(4), treatment=np.array([0, 1, 0, 1]),
            biomarker=np.array([4.0, 3.0, 2.0, 1.0]), covariates=(),
            outcome_spec=OutcomeSpec("binary"), y=np.array([0.0, 1.0, 1.0, 0.0]),
        )
        np.testing.assert_allclose(build_design(ds).matrix[:, 2], [4, 3, 2, 1])

    def test_with_arm_and_marker(self):
        ds = AnalysisDataset(
            subject_id=ids(2), treatment=np.array([1, 0]),
            biomarker=np.array([2.0, 3.0]), covariates=(),
            outcome_spec=OutcomeSpec("binary"), y=np.array([1.0, 0.0]),
        )
        m = build_design(ds).with_arm_and_marker(1.0, 5.0)
        np.testing.assert_allclose(m[:, 1], 1.0)
        np.testing.assert_allclose(m[:, 2], 5.0)
        np.testing.assert_allclose(m[:, 3], 5.0)


class TestPercentileRescale:
    def test_simple_ranks(self):
        np.testing.assert_allclose(percentile_rescale([5, 1, 3]), [0.75, 0.25, 0.50])

    def test_ties_use_midranks(self):
        np.testing.assert_allclose(percentile_rescale([2, 2, 2]), [0.5, 0.5, 0.5])

    def test_1_to_99(self):
        out = percentile_rescale(np.arange(1.0, 100.0))
        np.testing.assert_allclose(out, np.arange(1, 100) / 100.0)

    def test_needs_two_values(self):
        with pytest.raises(DataValidationError):
            percentile_rescale([1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60, unique=True))
    def test_monotone_and_open_interval(self, values):
        z = np.array(values)
        out = percentile_rescale(z)
        assert np.all((out > 0) & (out < 1))
        order = np.argsort(z)
        assert np.all(np.diff(out[order]) > 0)

    def test_quantile_round_trip(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=25)
        pct = percentile_rescale(z)
        np.testing.assert_allclose(marker_quantile(z, pct), z, atol=1e-12)
