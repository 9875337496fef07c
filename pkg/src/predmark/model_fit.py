"""Regression fitting: linear, logistic, and Cox proportional hazards.

All three families share the treatment x biomarker interaction design and
report a coefficient vector, a model-based covariance (inverse information),
and, for the GLM families, a leverage-corrected sandwich covariance.  The Cox
fit additionally carries the Breslow baseline cumulative hazard.

:class:`CoxData` precomputes the sorted risk-set structure once so the
partial likelihood can be re-evaluated cheaply for many coefficient vectors
or many dichotomizations of the same data (threshold scans, MCMC).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data_model import AnalysisDataset, DesignMatrix, build_design
from .errors import (
    ConvergenceError,
    DataValidationError,
    LeveragePointError,
    SeparationError,
    SingularDesignError,
)

SCORE_TOL = 1e-8
MAX_ITER_LOGISTIC = 25
MAX_ITER_COX = 50
DIVERGENCE_BOUND = 50.0  # |beta| on the standardized-covariate scale


@dataclass(frozen=True)
class Convergence:
    iterations: int
    gradient_norm: float
    converged: bool


@dataclass(frozen=True)
class FittedModel:
    """Coefficients, covariances, and (for Cox) the baseline cumulative hazard.

    ``design`` is None when the model was fitted on a bare matrix; the
    marginalization and cut-off helpers need a full interaction design.
    """

    family: str  # "linear" | "logistic" | "cox"
    beta: np.ndarray
    cov_model: np.ndarray
    cov_robust: np.ndarray | None
    design: DesignMatrix | None
    convergence: Convergence
    baseline_times: np.ndarray | None = None
    baseline_cumhaz: np.ndarray | None = None
    ties: str | None = None
    sigma2: float | None = None  # linear family residual variance
    max_time: float | None = None  # latest observed follow-up (cox)

    def baseline_cumhaz_at(self, t: float) -> float:
        """Step-function value of the baseline cumulative hazard at ``t``."""
        if self.baseline_times is None:
            raise ValueError("baseline hazard only available for Cox fits")
        idx = np.searchsorted(self.baseline_times, t, side="right") - 1
        return 0.0 if idx < 0 else float(self.baseline_cumhaz[idx])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_model))


@dataclass(frozen=True)
class InteractionTest:
    estimate: float
    se: float
    z: float
    p: float


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


def _check_rank(W: np.ndarray):
    if np.linalg.matrix_rank(W) < W.shape[1]:
        raise SingularDesignError(
            f"design matrix is rank deficient ({W.shape[1]} columns)"
        )


def _standardized_scale(W: np.ndarray) -> np.ndarray:
    sd = W.std(axis=0)
    sd[sd == 0] = 0.0  # intercept-like columns never trip the bound
    return sd


def _matrix_of(W) -> tuple[np.ndarray, DesignMatrix | None]:
    """Accept either a DesignMatrix or a bare (n, k) array."""
    if isinstance(W, DesignMatrix):
        return W.matrix, W
    return np.atleast_2d(np.asarray(W, dtype=float)), None


def fit_linear(W, y: np.ndarray) -> FittedModel:
    """Ordinary least squares with model-based and sandwich covariances."""
    X, design = _matrix_of(W)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k:
        raise DataValidationError(f"need more rows ({n}) than columns ({k})")
    _check_rank(X)
    xtx = X.T @ X
    beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - k)
    xtx_inv = np.linalg.inv(xtx)
    cov_model = _symmetrize(sigma2 * xtx_inv)
    score_norm = float(np.abs(X.T @ resid).max())
    model = FittedModel(
        family="linear",
        beta=beta,
        cov_model=cov_model,
        cov_robust=None,
        design=design,
        convergence=Convergence(1, score_norm, True),
        sigma2=sigma2,
    )
    cov_robust = sandwich_covariance(model, W, y)
    return FittedModel(
        family="linear",
        beta=beta,
        cov_model=cov_model,
        cov_robust=cov_robust,
        design=design,
        convergence=Convergence(1, score_norm, True),
        sigma2=sigma2,
    )


def logistic_loglik(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    """Bernoulli log likelihood at ``beta`` (stable for large |eta|)."""
    eta = X @ beta
    # log(1 + exp(eta)) without overflow
    log1pexp = np.where(eta > 30, eta, np.log1p(np.exp(np.minimum(eta, 30))))
    return float(y @ eta - log1pexp.sum())


def fit_logistic(W, y: np.ndarray) -> FittedModel:
    """Maximum likelihood logistic regression via iteratively reweighted
    least squares; stops when max |score| < 1e-8 or after 25 iterations."""
    X, design = _matrix_of(W)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataValidationError("logistic outcome must be 0/1")
    if y.min() == y.max():
        raise DataValidationError("both outcome classes must be present")
    _check_rank(X)
    n, k = X.shape
    scale = _standardized_scale(X)
    beta = np.zeros(k)
    score_norm = np.inf
    for it in range(1, MAX_ITER_LOGISTIC + 1):
        p = expit(X @ beta)
        v = p * (1.0 - p)
        score = X.T @ (y - p)
        score_norm = float(np.abs(score).max())
        if score_norm < SCORE_TOL:
            break
        info = X.T @ (X * v[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularDesignError("information matrix is singular") from None
        beta = beta + step
        if np.any(np.abs(beta) * scale > DIVERGENCE_BOUND):
            raise SeparationError(
                "coefficients diverging; outcome is (quasi-)separated"
            )
    p = expit(X @ beta)
    info = X.T @ (X * (p * (1.0 - p))[:, None])
    cov_model = _symmetrize(np.linalg.inv(info))
    converged = score_norm < SCORE_TOL
    if not converged:
        warnings.warn("logistic fit did not reach score tolerance", stacklevel=2)
    model = FittedModel(
        family="logistic",
        beta=beta,
        cov_model=cov_model,
        cov_robust=None,
        design=design,
        convergence=Convergence(it, score_norm, converged),
    )
    cov_robust = sandwich_covariance(model, W, y)
    return FittedModel(
        family="logistic",
        beta=beta,
        cov_model=cov_model,
        cov_robust=cov_robust,
        design=design,
        convergence=Convergence(it, score_norm, converged),
    )


def sandwich_covariance(model: FittedModel, W: DesignMatrix, y: np.ndarray) -> np.ndarray:
    """Leverage-corrected sandwich covariance for the GLM families.

    bread = inverse information; meat weights each row by
    residual^2 / (1 - h_i)^2 with h_i the hat-matrix diagonal computed under
    the family's working weights.
    """
    X, _ = _matrix_of(W)
    y = np.asarray(y, dtype=float)
    if model.family == "linear":
        v = np.ones(X.shape[0])
        resid = y - X @ model.beta
    elif model.family == "logistic":
        p = expit(X @ model.beta)
        v = p * (1.0 - p)
        resid = y - p
    else:
        raise ValueError("sandwich covariance applies to GLM families only")
    info = X.T @ (X * v[:, None])
    bread = np.linalg.inv(info)
    h = v * np.einsum("ij,jk,ik->i", X, bread, X)
    bad = np.nonzero(h >= 1.0 - 1e-12)[0]
    if bad.size:
        raise LeveragePointError(f"exact leverage point at row {bad[0]}")
    w = (resid / (1.0 - h)) ** 2
    meat = X.T @ (X * w[:, None])
    return _symmetrize(bread @ meat @ bread)


class CoxData:
    """Sorted risk-set structure for fast partial-likelihood evaluation.

    Sorting, tie grouping, and the Efron within-tie fractions depend only on
    (time, event), so they are computed once and reused across coefficient
    vectors and across design columns that change (threshold indicators).
    """

    def __init__(self, time, event, X: np.ndarray | None = None, ties: str = "efron"):
        time = np.asarray(time, dtype=float)
        event = np.asarray(event)
        if event.sum() < 1:
            raise DataValidationError("no events in the data")
        if ties not in ("efron", "breslow"):
            raise ValueError(f"unknown tie method {ties!r}")
        self.ties = ties
        self.n = len(time)
        self.order = np.argsort(time, kind="stable")
        self.time_s = time[self.order]
        self.event_s = event[self.order].astype(float)
        self.X_s = None if X is None else np.asarray(X, dtype=float)[self.order]

        utimes, gstart = np.unique(self.time_s, return_index=True)
        d = np.add.reduceat(self.event_s, gstart)
        egroups = np.nonzero(d > 0)[0]
        self.event_times = utimes[egroups]
        self.d_per_group = d[egroups]
        # one (group, l) term per event; frac = l/d within the tie group
        reps = self.d_per_group.astype(int)
        self.kl_start = np.repeat(gstart[egroups], reps)
        grp_of_kl = np.repeat(np.arange(len(egroups)), reps)
        l_idx = np.concatenate([np.arange(r) for r in reps]) if reps.size else np.array([])
        if self.ties == "breslow":
            self.kl_frac = np.zeros(len(l_idx))
        else:
            self.kl_frac = l_idx / np.repeat(reps, reps)
        self._gstart_all = gstart
        self._egroup_gstart = gstart[egroups]
        self._grp_of_kl = grp_of_kl
        self._gidx_of_kl = np.searchsorted(gstart, self.kl_start)
        self.n_events = int(self.event_s.sum())

    # -- likelihood pieces ------------------------------------------------

    def _risk_terms(self, eta_s: np.ndarray):
        """exp(eta) (centered), suffix sums, and tied-event sums."""
        r = np.exp(eta_s - eta_s.max())
        s0_suffix = np.cumsum(r[::-1])[::-1]
        sd0 = np.add.reduceat(r * self.event_s, self._gstart_all)
        return r, s0_suffix, sd0

    def loglik(self, eta_s: np.ndarray) -> float:
        """Log partial likelihood at a sorted linear predictor."""
        shift = eta_s.max()
        r, s0_suffix, sd0 = self._risk_terms(eta_s)
        denom = s0_suffix[self.kl_start] - self.kl_frac * sd0[self._gidx_of_kl]
        return float((eta_s - shift) @ self.event_s - np.log(denom).sum())

    def loglik_grad_hess(self, eta_s: np.ndarray):
        """Log partial likelihood with its gradient and Hessian in beta.

        Requires covariates; gradients are with respect to the (sorted)
        design columns held in ``X_s``.
        """
        if self.X_s is None:
            raise ValueError("CoxData was built without covariates")
        X = self.X_s
        shift = eta_s.max()
        r = np.exp(eta_s - shift)
        e = self.event_s
        rX = r[:, None] * X
        s0_suffix = np.cumsum(r[::-1])[::-1]
        s1_suffix = np.cumsum(rX[::-1], axis=0)[::-1]
        outer = np.einsum("ij,ik->ijk", rX, X)
        s2_suffix = np.cumsum(outer[::-1], axis=0)[::-1]

        g = self._gstart_all
        sd0 = np.add.reduceat(r * e, g)
        sd1 = np.add.reduceat(rX * e[:, None], g, axis=0)
        sd2 = np.add.reduceat(outer * e[:, None, None], g, axis=0)

        gidx = self._gidx_of_kl
        f = self.kl_frac[:, None]
        denom = s0_suffix[self.kl_start] - self.kl_frac * sd0[gidx]
        num1 = s1_suffix[self.kl_start] - f * sd1[gidx]
        num2 = s2_suffix[self.kl_start] - f[:, :, None] * sd2[gidx]

        mu = num1 / denom[:, None]
        ll = float((eta_s - shift) @ e - np.log(denom).sum())
        grad = (X * e[:, None]).sum(axis=0) - mu.sum(axis=0)
        hess = -(num2 / denom[:, None, None]).sum(axis=0) + np.einsum("ij,ik->jk", mu, mu)
        return ll, grad, hess

    def breslow_baseline(self, eta_s: np.ndarray):
        """Breslow baseline cumulative hazard evaluated at the given
        (sorted) linear predictor; jumps only at observed event times."""
        r = np.exp(eta_s)
        s0_suffix = np.cumsum(r[::-1])[::-1]
        s0_at_events = s0_suffix[self._egroup_gstart]
        return self.event_times, np.cumsum(self.d_per_group / s0_at_events)


def cox_partial_loglik(time, event, X: np.ndarray, beta: np.ndarray, ties="efron") -> float:
    """Convenience wrapper: log partial likelihood at ``beta``."""
    data = CoxData(time, event, X, ties=ties)
    return data.loglik(data.X_s @ beta)


def newton_cox(data: CoxData, beta0: np.ndarray | None = None, warn: bool = True):
    """Damped Newton-Raphson on the partial likelihood held by ``data``.

    Returns (beta, cov_model, Convergence).  Divergence on the standardized
    scale (monotone likelihood) stops iteration with ``converged=False``.
    """
    Xs = data.X_s
    k = Xs.shape[1]
    scale = _standardized_scale(Xs)
    beta = np.zeros(k) if beta0 is None else np.array(beta0, dtype=float)
    ll, grad, hess = data.loglik_grad_hess(Xs @ beta)
    score_norm = float(np.abs(grad).max())
    converged = score_norm < SCORE_TOL
    it = 0
    while not converged and it < MAX_ITER_COX:
        it += 1
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise SingularDesignError(
                "Cox information matrix is singular on the event risk sets"
            ) from None
        # damped update: halve until the likelihood does not decrease
        frac = 1.0
        for _ in range(30):
            ll_new = data.loglik(Xs @ (beta + frac * step))
            if ll_new >= ll - 1e-12:
                break
            frac /= 2.0
        beta = beta + frac * step
        diverged = np.any(np.abs(beta) * scale > DIVERGENCE_BOUND)
        ll, grad, hess = data.loglik_grad_hess(Xs @ beta)
        score_norm = float(np.abs(grad).max())
        converged = score_norm < SCORE_TOL
        if diverged and not converged:
            if warn:
                warnings.warn(
                    "Cox coefficients diverging (monotone likelihood); fit flagged",
                    stacklevel=2,
                )
            break
    if not converged and it >= MAX_ITER_COX and warn:
        warnings.warn("Cox fit did not reach score tolerance", stacklevel=2)
    try:
        cov_model = _symmetrize(np.linalg.inv(-hess))
    except np.linalg.LinAlgError:
        raise SingularDesignError(
            "Cox information matrix is singular at the optimum"
        ) from None
    return beta, cov_model, Convergence(it, score_norm, converged)


def fit_cox(
    W,
    time,
    event,
    ties: str = "efron",
) -> FittedModel:
    """Newton-Raphson on the Cox partial likelihood.

    ``W`` must not contain an intercept column.  Ties are handled with the
    Efron correction by default ("breslow" available).  The baseline
    cumulative hazard is the Breslow estimator at the fitted coefficients.
    """
    X, design = _matrix_of(W)
    if design is not None and design.has_intercept:
        raise DataValidationError("Cox design must not contain an intercept")
    _check_rank(X)
    data = CoxData(time, event, X, ties=ties)
    beta, cov_model, conv = newton_cox(data)
    btimes, bcumhaz = data.breslow_baseline(data.X_s @ beta)
    return FittedModel(
        family="cox",
        beta=beta,
        cov_model=cov_model,
        cov_robust=None,
        design=design,
        convergence=conv,
        baseline_times=btimes,
        baseline_cumhaz=bcumhaz,
        ties=ties,
        max_time=float(np.max(time)),
    )


def interaction_test(model: FittedModel) -> InteractionTest:
    """Wald test of the treatment x biomarker coefficient (model covariance)."""
    if model.design is None:
        raise ValueError("model was fitted on a bare matrix; no interaction column")
    idx = model.design.interaction_idx
    if idx >= len(model.beta):
        raise ValueError("model has no interaction column")
    est = float(model.beta[idx])
    se = float(np.sqrt(model.cov_model[idx, idx]))
    z = est / se if se > 0 else np.inf * np.sign(est)
    p = float(2.0 * norm.sf(abs(z))) if np.isfinite(z) else 0.0
    if est == 0.0:
        z, p = 0.0, 1.0
    return InteractionTest(estimate=est, se=se, z=z, p=p)


def fit_dataset(ds: AnalysisDataset, ties: str = "efron") -> FittedModel:
    """Fit the family implied by the dataset's outcome spec."""
    if ds.family == "survival":
        return fit_cox(build_design(ds, intercept=False), ds.time, ds.event, ties=ties)
    design = build_design(ds, intercept=True)
    if ds.family == "binary":
        return fit_logistic(design, ds.y)
    return fit_linear(design, ds.y)
