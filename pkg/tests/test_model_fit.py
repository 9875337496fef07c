import numpy as np
import pytest
from scipy.special import expit, logit

from predmark.data_model import build_design
from predmark.errors import (
    DataValidationError,
    LeveragePointError,
    SeparationError,
    SingularDesignError,
)
from predmark.model_fit import (
    CoxData,
    cox_partial_loglik,
    fit_cox,
    fit_dataset,
    fit_linear,
    fit_logistic,
    interaction_test,
    logistic_loglik,
    sandwich_covariance,
)
from predmark.survival import nelson_aalen

from .conftest import make_binary_ds, make_continuous_ds, make_survival_ds


def refine_grid_optimum(value_fn, centers, half_widths, stages=6, points=41):
    """Iteratively zoomed grid search; independent optimizer for oracles."""
    centers = np.array(centers, dtype=float)
    half_widths = np.array(half_widths, dtype=float)
    for _ in range(stages):
        axes = [np.linspace(c - h, c + h, points) for c, h in zip(centers, half_widths)]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.column_stack([m.ravel() for m in mesh])
        vals = np.array([value_fn(b) for b in flat])
        centers = flat[np.argmax(vals)]
        half_widths = half_widths * (2.0 / (points - 1)) * 1.5
    return centers


class TestFitLinear:
    def test_exact_linear_relationship(self, continuous_ds):
        ds = make_continuous_ds(sigma=0.0, seed=4)
        z = ds.biomarker
        y = 2.0 + 3.0 * z
        design = build_design(ds)
        m = fit_linear(design, y)
        assert m.beta[0] == pytest.approx(2.0, abs=1e-10)
        assert m.beta[design.biomarker_idx] == pytest.approx(3.0, abs=1e-10)
        assert m.beta[design.treatment_idx] == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(design.matrix @ m.beta, y, atol=1e-10)

    def test_constant_outcome(self, continuous_ds):
        y = np.full(continuous_ds.n, 7.5)
        m = fit_linear(build_design(continuous_ds), y)
        assert m.beta[0] == pytest.approx(7.5, abs=1e-10)
        np.testing.assert_allclose(m.beta[1:], 0.0, atol=1e-10)

    def test_six_points_against_svd_solution(self):
        # independent route: SVD pseudo-inverse instead of normal equations
        rng = np.random.default_rng(11)
        X = np.column_stack([
            np.ones(6),
            np.array([0, 1, 0, 1, 0, 1.0]),
            np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
            np.array([0, 1.0, 0, 2.0, 0, 3.0]),
        ])
        y = rng.normal(size=6)
        m = fit_linear(X, y)
        np.testing.assert_allclose(m.beta, np.linalg.pinv(X) @ y, atol=1e-10)

    def test_needs_more_rows_than_columns(self):
        with pytest.raises(DataValidationError):
            fit_linear(np.ones((3, 4)), np.zeros(3))

    def test_rank_deficiency(self):
        X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
        with pytest.raises(SingularDesignError):
            fit_linear(X, np.arange(10.0))


class TestFitLogistic:
    def test_intercept_only_quarter_events(self):
        y = np.array([1.0] * 25 + [0.0] * 75)
        m = fit_logistic(np.ones((100, 1)), y)
        assert m.beta[0] == pytest.approx(logit(0.25), abs=1e-8)
        assert m.beta[0] == pytest.approx(-1.0986, abs=1e-4)

    def test_balanced_outcome_independent_of_design(self):
        rng = np.random.default_rng(2)
        n = 400
        x = rng.normal(size=n)
        y = np.tile([0.0, 1.0], n // 2)  # independent of x by construction
        X = np.column_stack([np.ones(n), x])
        m = fit_logistic(X, y)
        assert abs(m.beta[1]) < 0.2
        assert m.beta[0] == pytest.approx(0.0, abs=0.2)

    def test_eight_rows_match_grid_search_optimum(self):
        X = np.column_stack([np.ones(8), np.array([-1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2.0])])
        y = np.array([0, 0, 1, 0, 1, 0, 1, 1.0])
        m = fit_logistic(X, y)
        oracle = refine_grid_optimum(
            lambda b: logistic_loglik(X, y, b), centers=[0.0, 0.0], half_widths=[4.0, 4.0]
        )
        np.testing.assert_allclose(m.beta, oracle, atol=1e-4)

    def test_fitted_mean_matches_observed_mean(self, binary_ds):
        design = build_design(binary_ds)
        m = fit_logistic(design, binary_ds.y)
        p = expit(design.matrix @ m.beta)
        assert p.mean() == pytest.approx(binary_ds.y.mean(), abs=1e-9)
        assert np.all((p > 0) & (p < 1))

    def test_separation_detected(self):
        x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
        y = (x > 0).astype(float)
        with pytest.raises(SeparationError):
            fit_logistic(np.column_stack([np.ones(6), x]), y)

    def test_single_class_rejected(self):
        with pytest.raises(DataValidationError):
            fit_logistic(np.ones((5, 1)), np.ones(5))

    def test_convergence_score_tolerance(self, binary_ds):
        m = fit_logistic(build_design(binary_ds), binary_ds.y)
        assert m.convergence.converged
        assert m.convergence.gradient_norm < 1e-6


class TestFitCox:
    def test_exponential_rate_ratio_oracle(self):
        rng = np.random.default_rng(7)
        n = 2000
        x = rng.integers(0, 2, n).astype(float)
        t = rng.exponential(1.0 / np.exp(np.log(2.0) * x))
        m = fit_cox(x[:, None], t, np.ones(n))
        # oracle: exponential MLE of the log rate ratio
        r1 = x.sum() / t[x == 1].sum()
        r0 = (n - x.sum()) / t[x == 0].sum()
        assert m.beta[0] == pytest.approx(np.log(2.0), abs=0.1)
        assert m.beta[0] == pytest.approx(np.log(r1 / r0), abs=0.05)

    def test_small_dataset_matches_grid_search(self):
        time = np.array([3.0, 5.0, 7.0, 2.0, 8.0, 1.0, 6.0, 4.0])
        event = np.array([1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0])
        x = np.array([0.5, -0.2, 1.0, -1.5, 0.3, 0.8, -0.7, 1.2])[:, None]
        m = fit_cox(x, time, event)
        oracle = refine_grid_optimum(
            lambda b: cox_partial_loglik(time, event, x, np.atleast_1d(b)),
            centers=[0.0], half_widths=[4.0],
        )
        assert m.beta[0] == pytest.approx(oracle[0], abs=1e-4)

    def test_no_events_rejected(self):
        with pytest.raises(DataValidationError, match="no events"):
            fit_cox(np.ones((4, 1)), np.arange(1.0, 5.0), np.zeros(4))

    def test_baseline_equals_nelson_aalen_at_zero_coefficients(self):
        time = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        event = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        data = CoxData(time, event, np.zeros((5, 1)))
        bt, bh = data.breslow_baseline(np.zeros(5))
        na_t, na_h = nelson_aalen(time, event)
        np.testing.assert_allclose(bt, na_t)
        np.testing.assert_allclose(bh, na_h, atol=1e-12)

    def test_gradient_matches_finite_differences(self, survival_ds):
        design = build_design(survival_ds, intercept=False)
        m = fit_cox(design, survival_ds.time, survival_ds.event)
        data = CoxData(survival_ds.time, survival_ds.event, design.matrix)
        beta = m.beta + 0.05  # off-optimum point so the gradient is nonzero
        _, grad, _ = data.loglik_grad_hess(data.X_s @ beta)
        eps = 1e-6
        for j in range(len(beta)):
            bp, bm = beta.copy(), beta.copy()
            bp[j] += eps
            bm[j] -= eps
            fd = (data.loglik(data.X_s @ bp) - data.loglik(data.X_s @ bm)) / (2 * eps)
            assert abs(fd - grad[j]) / (1.0 + abs(grad[j])) < 1e-5

    def test_breslow_baseline_nondecreasing_jumps_at_events(self, survival_ds):
        m = fit_cox(build_design(survival_ds, intercept=False),
                    survival_ds.time, survival_ds.event)
        assert np.all(np.diff(m.baseline_cumhaz) > 0)
        event_times = np.unique(survival_ds.time[survival_ds.event == 1])
        np.testing.assert_allclose(m.baseline_times, event_times)
        assert m.baseline_cumhaz_at(0.0) == 0.0

    def test_efron_handles_ties(self):
        time = np.array([2.0, 2.0, 2.0, 3.0, 4.0, 4.0, 5.0, 6.0])
        event = np.array([1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0])
        x = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0])[:, None]
        m_e = fit_cox(x, time, event, ties="efron")
        m_b = fit_cox(x, time, event, ties="breslow")
        assert m_e.convergence.converged and m_b.convergence.converged
        assert m_e.beta[0] != pytest.approx(m_b.beta[0], abs=1e-6)

    def test_score_norm_small_at_convergence(self, survival_ds):
        m = fit_cox(build_design(survival_ds, intercept=False),
                    survival_ds.time, survival_ds.event)
        assert m.convergence.gradient_norm < 1e-6


class TestSandwich:
    def test_three_point_hand_computation(self):
        # y on x with intercept; every quantity written out by hand
        X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        y = np.array([0.0, 1.0, 1.0])
        m = fit_linear(X, y)
        # beta by hand: xbar=1, ybar=2/3, slope=Sxy/Sxx=1/2, intercept=2/3-1/2
        np.testing.assert_allclose(m.beta, [1 / 6, 1 / 2], atol=1e-12)
        resid = y - X @ m.beta  # (-1/6, 1/3, -1/6)
        np.testing.assert_allclose(resid, [-1 / 6, 1 / 3, -1 / 6], atol=1e-12)
        # hat diagonals for this design: 5/6, 1/3, 5/6
        h = np.array([5 / 6, 1 / 3, 5 / 6])
        w = (resid / (1 - h)) ** 2
        xtx_inv = np.linalg.inv(X.T @ X)
        meat = X.T @ (X * w[:, None])
        expected = xtx_inv @ meat @ xtx_inv
        got = sandwich_covariance(m, X, y)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_duplicated_rows_halve_covariance(self):
        # leverage corrections make the halving exact only as h -> 0,
        # so use many rows to keep h small
        ds = make_continuous_ds(n=200, seed=9)
        design = build_design(ds)
        m1 = fit_linear(design, ds.y)
        X2 = np.vstack([design.matrix, design.matrix])
        y2 = np.concatenate([ds.y, ds.y])
        m2 = fit_linear(X2, y2)
        np.testing.assert_allclose(
            sandwich_covariance(m2, X2, y2),
            sandwich_covariance(m1, design, ds.y) / 2.0,
            rtol=0.05, atol=1e-12,
        )

    def test_large_sample_agreement_under_homoskedasticity(self):
        rng = np.random.default_rng(21)
        n = 5000
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = 1.0 + 0.5 * X[:, 1] + rng.normal(size=n)
        m = fit_linear(X, y)
        se_model = np.sqrt(np.diag(m.cov_model))
        se_robust = np.sqrt(np.diag(m.cov_robust))
        np.testing.assert_allclose(se_robust, se_model, rtol=0.10)

    def test_exact_leverage_point_rejected(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 5.0]])
        y = np.array([0.5, 1.0, 2.0])
        m = fit_linear(X, y)
        with pytest.raises(LeveragePointError, match="row 2"):
            sandwich_covariance(m, X, y)

    def test_logistic_sandwich_is_psd_and_symmetric(self, binary_ds):
        m = fit_logistic(build_design(binary_ds), binary_ds.y)
        c = m.cov_robust
        np.testing.assert_allclose(c, c.T, atol=1e-10)
        assert np.linalg.eigvalsh(c).min() >= -1e-10

    def test_cox_has_no_sandwich(self, survival_ds):
        m = fit_cox(build_design(survival_ds, intercept=False),
                    survival_ds.time, survival_ds.event)
        with pytest.raises(ValueError):
            sandwich_covariance(m, build_design(survival_ds, intercept=False),
                                survival_ds.event)


class TestInteractionTest:
    def test_z_of_1_96_gives_p_of_05(self, binary_ds):
        m = fit_dataset(binary_ds)
        idx = m.design.interaction_idx
        se = float(np.sqrt(m.cov_model[idx, idx]))
        beta = m.beta.copy()
        beta[idx] = 1.96 * se
        forced = type(m)(
            family=m.family, beta=beta, cov_model=m.cov_model,
            cov_robust=m.cov_robust, design=m.design, convergence=m.convergence,
        )
        t = interaction_test(forced)
        assert t.p == pytest.approx(0.05, abs=1e-4)

    def test_zero_estimate_gives_p_of_1(self, binary_ds):
        m = fit_dataset(binary_ds)
        beta = m.beta.copy()
        beta[m.design.interaction_idx] = 0.0
        forced = type(m)(
            family=m.family, beta=beta, cov_model=m.cov_model,
            cov_robust=m.cov_robust, design=m.design, convergence=m.convergence,
        )
        t = interaction_test(forced)
        assert t.p == 1.0 and t.z == 0.0


class TestCovarianceInvariants:
    @pytest.mark.parametrize("maker", [make_binary_ds, make_continuous_ds])
    def test_glm_covariances_symmetric_psd(self, maker):
        ds = maker(seed=13)
        m = fit_dataset(ds)
        for cov in (m.cov_model, m.cov_robust):
            np.testing.assert_allclose(cov, cov.T, atol=1e-10)
            assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_cox_covariance_symmetric_psd(self):
        ds = make_survival_ds(seed=13)
        m = fit_dataset(ds)
        np.testing.assert_allclose(m.cov_model, m.cov_model.T, atol=1e-10)
        assert np.linalg.eigvalsh(m.cov_model).min() >= -1e-10
