import numpy as np
import pytest

from predmark.data_model import AnalysisDataset, Covariate, OutcomeSpec


def ids(n):
    return np.array([str(i + 1) for i in range(n)], dtype=object)


def make_binary_ds(n=200, seed=0, beta=(0.3, 0.4, 0.2, -0.6), with_covariate=True):
    """Logistic-model dataset with a treatment x marker interaction."""
    rng = np.random.default_rng(seed)
    a = np.zeros(n, dtype=int)
    a[: n // 2] = 1
    rng.shuffle(a)
    z = rng.normal(0, 1.5, n)
    x = rng.normal(0, 1, n)
    b0, b1, b2, b3 = beta
    lp = b0 + b1 * a + b2 * z + b3 * a * z + (0.3 * x if with_covariate else 0)
    y = (rng.random(n) < 1 / (1 + np.exp(-lp))).astype(float)
    covs = (Covariate("x", "continuous", x),) if with_covariate else ()
    return AnalysisDataset(
        subject_id=ids(n), treatment=a, biomarker=z, covariates=covs,
        outcome_spec=OutcomeSpec("binary"), y=y,
    )


def make_survival_ds(n=300, seed=0, beta=(0.5, 0.1, 0.59), censor_upper=4.0,
                     with_covariates=True):
    """Cox-model dataset matching the simulation design's structure."""
    rng = np.random.default_rng(seed)
    a = np.zeros(n, dtype=int)
    a[: n // 2] = 1
    rng.shuffle(a)
    z = 0.2 + 2.0 * rng.normal(size=n)
    x1 = rng.normal(size=n)
    x2 = rng.binomial(1, 0.5, n).astype(float)
    b_a, b_z, b_az = beta
    lp = b_a * a + b_z * z + b_az * a * z
    if with_covariates:
        lp = lp + 0.1 * x1 + 0.2 * x2
    t = rng.exponential(1.0 / np.exp(lp))
    c = rng.uniform(0, censor_upper, n)
    time = np.minimum(t, c)
    event = (t <= c).astype(float)
    covs = (
        (Covariate("x1", "continuous", x1), Covariate("x2", "continuous", x2))
        if with_covariates else ()
    )
    return AnalysisDataset(
        subject_id=ids(n), treatment=a, biomarker=z, covariates=covs,
        outcome_spec=OutcomeSpec("survival"), time=time, event=event,
    )


def make_continuous_ds(n=120, seed=0, sigma=0.5):
    rng = np.random.default_rng(seed)
    a = np.tile([0, 1], n // 2)
    z = rng.normal(0, 1, n)
    x = rng.normal(0, 1, n)
    y = 1.0 + 0.5 * a + 0.3 * z - 0.4 * a * z + 0.2 * x + sigma * rng.normal(size=n)
    return AnalysisDataset(
        subject_id=ids(n), treatment=a.astype(int), biomarker=z,
        covariates=(Covariate("x", "continuous", x),),
        outcome_spec=OutcomeSpec("continuous"), y=y,
    )


@pytest.fixture
def binary_ds():
    return make_binary_ds()


@pytest.fixture
def survival_ds():
    return make_survival_ds()


@pytest.fixture
def continuous_ds():
    return make_continuous_ds()
