"""Monte Carlo harness: survival-data generation and method comparison.

Each replicate draws a trial with marker Z ~ N(0.2, sd 2), a balanced 0/1
treatment, covariates X1 ~ N(0,1) and X2 ~ Bernoulli(0.5), exponential event
times with rate exp(bA*A + bZ*Z + bAZ*A*Z + bX1*X1 + bX2*X2), and uniform
censoring calibrated to a target censoring fraction.  Three cut-off methods
run per replicate: the continuous-interaction risk-curve estimate, the
minimum-p-value scan, and the Bayesian threshold model.  Aggregates are the
bias, SD, root-MSE, 95% coverage, mean net gain, and rejection rates.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .bhm import BhmConfig, run_mcmc
from .cutoff import cutoff_se, formula_cutoff
from .data_model import AnalysisDataset, Covariate, OutcomeSpec, build_design
from .errors import DataValidationError, PredmarkError
from .marginal_risk import Z95
from .minp_scan import scan
from .model_fit import fit_cox, interaction_test
from .netgain import FixedCutoffRule, net_gain, subject_deltas
from .survival import km_median

METHODS = ("riskcurve", "minp", "bhm")

# (beta_a, beta_az) presets keyed by the designed cut-off location
STRONG_COEFFS = {-0.85: (0.5, 0.59), 0.2: (-0.1, 0.5), 1.25: (-0.55, 0.44)}
WEAK_COEFFS = {-0.85: (0.25, 0.29), 0.2: (-0.05, 0.25), 1.25: (-0.275, 0.22)}
NULL_COEFFS = {-0.85: (0.20, 0.0), 0.2: (-0.045, 0.0), 1.25: (-0.286, 0.0)}
POWER_COEFFS = {-0.85: (0.20, 0.235), 0.2: (-0.045, 0.225), 1.25: (-0.286, 0.229)}

_PRESETS = {
    "strong": STRONG_COEFFS,
    "weak": WEAK_COEFFS,
    "null": NULL_COEFFS,
    "power": POWER_COEFFS,
}

MARKER_MEAN = 0.2
MARKER_SD = 2.0


@dataclass(frozen=True)
class Scenario:
    n: int = 200
    beta_a: float = 0.5
    beta_az: float = 0.59
    beta_z: float = 0.1
    beta_x1: float = 0.1
    beta_x2: float = 0.2
    true_cutoff: float = -0.85
    effect: str = "strong"
    censor_target: float = 0.2
    reps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.censor_target < 1.0):
            raise DataValidationError("censor_target must lie in [0, 1)")
        if self.n < 10 or self.reps < 1:
            raise DataValidationError("need n >= 10 and reps >= 1")
        if self.beta_az != 0.0:
            implied = -self.beta_a / self.beta_az
            if abs(implied - self.true_cutoff) > 0.01:
                raise DataValidationError(
                    f"-beta_a/beta_az = {implied:.4f} does not match "
                    f"true_cutoff = {self.true_cutoff}"
                )

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def preset_scenario(
    effect: str,
    cutoff: float,
    n: int = 200,
    reps: int = 1000,
    seed: int = 0,
    censor_target: float = 0.2,
) -> Scenario:
    """Scenario with the published coefficient sets for a designed cut-off."""
    try:
        beta_a, beta_az = _PRESETS[effect][cutoff]
    except KeyError:
        raise DataValidationError(
            f"no preset for effect={effect!r}, cutoff={cutoff!r}"
        ) from None
    return Scenario(
        n=n, beta_a=beta_a, beta_az=beta_az, true_cutoff=cutoff,
        effect=effect, reps=reps, seed=seed, censor_target=censor_target,
    )


def _draw_covariates(sc: Scenario, rng):
    n = sc.n
    z = MARKER_MEAN + MARKER_SD * rng.standard_normal(n)
    a = np.zeros(n)
    a[: n // 2] = 1.0
    rng.shuffle(a)
    x1 = rng.standard_normal(n)
    x2 = rng.binomial(1, 0.5, n).astype(float)
    return z, a, x1, x2


def _hazards(sc: Scenario, z, a, x1, x2):
    lp = (sc.beta_a * a + sc.beta_z * z + sc.beta_az * a * z
          + sc.beta_x1 * x1 + sc.beta_x2 * x2)
    return np.exp(lp)  # baseline hazard 1


def calibrate_censoring(sc: Scenario, mc_draws: int = 100_000) -> float | None:
    """Upper bound E of the Unif(0, E) censoring law hitting the target
    censoring fraction, by root search on a Monte Carlo estimate of
    P(C < T) = E_W[(1 - exp(-hE)) / (hE)]."""
    if sc.censor_target == 0.0:
        return None
    rng = np.random.default_rng([sc.seed, 202_407])
    draw = replace(sc, n=mc_draws)
    z, a, x1, x2 = _draw_covariates(draw, rng)
    h = _hazards(sc, z, a, x1, x2)

    def censored_fraction(e):
        return float(np.mean(-np.expm1(-h * e) / (h * e))) - sc.censor_target

    lo, hi = 1e-9, 1.0
    while censored_fraction(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise DataValidationError(
                f"cannot reach censoring target {sc.censor_target}"
            )
    return float(brentq(censored_fraction, lo, hi, xtol=1e-10))


def generate_dataset(sc: Scenario, rep_index: int, e_upper: float | None = None) -> AnalysisDataset:
    """One simulated trial; deterministic given (scenario seed, rep_index)."""
    if e_upper is None:
        e_upper = calibrate_censoring(sc)
    rng = np.random.default_rng([sc.seed, rep_index])
    z, a, x1, x2 = _draw_covariates(sc, rng)
    h = _hazards(sc, z, a, x1, x2)
    t_event = rng.exponential(1.0 / h)
    if e_upper is None:
        time = t_event
        event = np.ones(sc.n)
    else:
        c = rng.uniform(0.0, e_upper, sc.n)
        time = np.minimum(t_event, c)
        event = (t_event <= c).astype(float)
    return AnalysisDataset(
        subject_id=np.array([str(i + 1) for i in range(sc.n)], dtype=object),
        treatment=a.astype(int),
        biomarker=z,
        covariates=(
            Covariate("x1", "continuous", x1),
            Covariate("x2", "continuous", x2),
        ),
        outcome_spec=OutcomeSpec("survival"),
        time=time,
        event=event,
    )


@dataclass
class _RepResult:
    estimate: float = math.nan
    covered: bool | None = None
    reject: bool | None = None
    reject_fdr: bool | None = None
    theta: float = math.nan
    failed: bool = False


def _rep_seed(sc_seed: int, rep_index: int) -> int:
    return int(np.random.SeedSequence((sc_seed, rep_index, 7)).generate_state(1)[0])


def _run_replicate(
    sc: Scenario,
    rep_index: int,
    methods,
    e_upper,
    alpha: float,
    bhm_cfg: BhmConfig,
) -> dict:
    ds = generate_dataset(sc, rep_index, e_upper=e_upper)
    out: dict[str, _RepResult] = {}

    cont_model = None
    deltas = None

    def continuous_fit():
        nonlocal cont_model, deltas
        if cont_model is None:
            design = build_design(ds, intercept=False)
            cont_model = fit_cox(design, ds.time, ds.event)
            landmark = km_median(ds.time, ds.event)
            deltas = subject_deltas(cont_model, ds, landmark=landmark)
        return cont_model

    def theta_at(cutoff: float) -> float:
        model = continuous_fit()
        b3 = model.beta[model.design.interaction_idx]
        side = "above" if b3 > 0 else "below"
        if not np.isfinite(cutoff):
            return math.nan
        rule = FixedCutoffRule(z_cut=cutoff, negative_side=side)
        return net_gain(model, ds, rule=rule, deltas=deltas).theta

    if "riskcurve" in methods:
        res = _RepResult()
        try:
            model = continuous_fit()
            test = interaction_test(model)
            res.reject = test.p < alpha
            d = model.design
            chat = formula_cutoff(
                model.beta[d.treatment_idx], model.beta[d.interaction_idx]
            )
            se = cutoff_se(model)
            res.estimate = chat
            res.covered = abs(chat - sc.true_cutoff) <= Z95 * se
            res.theta = theta_at(chat)
        except PredmarkError:
            res.failed = True
        out["riskcurve"] = res

    if "minp" in methods:
        res = _RepResult()
        try:
            result = scan(ds)
            res.estimate = result.chosen.cutoff
            res.reject = result.chosen.p_raw < alpha
            res.reject_fdr = result.chosen.p_fdr < alpha
            res.theta = theta_at(result.chosen.cutoff)
        except PredmarkError:
            res.failed = True
        out["minp"] = res

    if "bhm" in methods:
        res = _RepResult()
        try:
            cfg = replace(bhm_cfg, seed=_rep_seed(sc.seed, rep_index))
            post = run_mcmc(ds, cfg)
            res.estimate = post.c_hat_marker
            lo, hi = post.c_ci_marker
            res.covered = lo <= sc.true_cutoff <= hi
            blo, bhi = post.interaction_ci(1.0 - alpha)
            res.reject = not (blo <= 0.0 <= bhi)
            res.theta = theta_at(post.c_hat_marker)
        except PredmarkError:
            res.failed = True
        out["bhm"] = res
    return out


@dataclass(frozen=True)
class MethodMetrics:
    method: str
    reps_used: int
    rep_failures: int
    bias: float
    sd: float
    sqrt_mse: float
    coverage_95: float | None
    mean_net_gain: float
    reject_rate: float | None
    reject_rate_fdr: float | None
    valid: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsReport:
    scenario: Scenario
    metrics: dict

    @property
    def valid(self) -> bool:
        return all(m.valid for m in self.metrics.values())

    def write_csv(self, path) -> None:
        methods = list(self.metrics)
        fields = ["bias", "sd", "sqrt_mse", "coverage_95", "mean_net_gain",
                  "reject_rate", "reject_rate_fdr", "rep_failures", "reps_used"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", *methods])
            for f in fields:
                row = [f]
                for m in methods:
                    v = getattr(self.metrics[m], f)
                    row.append("" if v is None else f"{v:.6g}")
                writer.writerow(row)

    def to_dict(self) -> dict:
        return {
            "scenario": asdict(self.scenario),
            "metrics": {m: v.to_dict() for m, v in self.metrics.items()},
            "valid": self.valid,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _aggregate(sc: Scenario, method: str, results: list[_RepResult]) -> MethodMetrics:
    ok = [r for r in results if not r.failed]
    failures = len(results) - len(ok)
    est = np.array([r.estimate for r in ok])
    usable = est[np.isfinite(est)]
    if usable.size:
        bias = float(usable.mean() - sc.true_cutoff)
        sd = float(usable.std(ddof=0))
        sqrt_mse = float(np.sqrt(np.mean((usable - sc.true_cutoff) ** 2)))
    else:
        bias = sd = sqrt_mse = math.nan
    coverages = [r.covered for r in ok if r.covered is not None]
    rejects = [r.reject for r in ok if r.reject is not None]
    rejects_fdr = [r.reject_fdr for r in ok if r.reject_fdr is not None]
    thetas = np.array([r.theta for r in ok])
    thetas = thetas[np.isfinite(thetas)]
    return MethodMetrics(
        method=method,
        reps_used=len(ok),
        rep_failures=failures,
        bias=bias,
        sd=sd,
        sqrt_mse=sqrt_mse,
        coverage_95=float(np.mean(coverages)) if coverages else None,
        mean_net_gain=float(thetas.mean()) if thetas.size else math.nan,
        reject_rate=float(np.mean(rejects)) if rejects else None,
        reject_rate_fdr=float(np.mean(rejects_fdr)) if rejects_fdr else None,
        valid=failures <= 0.05 * max(len(results), 1),
    )


_WORKER_STATE: dict = {}


def _worker_run(args):
    sc, rep, methods, e_upper, alpha, bhm_cfg = args
    return rep, _run_replicate(sc, rep, methods, e_upper, alpha, bhm_cfg)


def run_scenario(
    sc: Scenario,
    methods=METHODS,
    bhm_reps: int | None = None,
    bhm_config: BhmConfig | None = None,
    alpha: float = 0.05,
    n_processes: int = 1,
) -> MetricsReport:
    """All requested methods over the scenario's replicates.

    ``bhm_reps`` caps the (much slower) MCMC method at fewer replicates than
    the rest; the first replicates of the common stream are used so results
    stay deterministic.  Replicate failures are dropped and counted; a
    method with more than 5% failures is flagged invalid.
    """
    methods = tuple(m for m in METHODS if m in methods)
    if not methods:
        raise DataValidationError(f"methods must be a subset of {METHODS}")
    bhm_cfg = bhm_config or BhmConfig(iterations=5000, burn_in=1000)
    n_bhm = min(bhm_reps or sc.reps, sc.reps) if "bhm" in methods else 0
    e_upper = calibrate_censoring(sc)

    per_rep_methods = []
    for rep in range(sc.reps):
        wanted = tuple(
            m for m in methods if m != "bhm" or rep < n_bhm
        )
        if wanted:
            per_rep_methods.append((rep, wanted))

    collected: dict[str, list] = {m: [] for m in methods}
    jobs = [(sc, rep, wanted, e_upper, alpha, bhm_cfg) for rep, wanted in per_rep_methods]
    if n_processes > 1:
        with ProcessPoolExecutor(max_workers=n_processes) as pool:
            outputs = dict(pool.map(_worker_run, jobs, chunksize=8))
        ordered = [outputs[rep] for rep, _ in per_rep_methods]
    else:
        ordered = [_run_replicate(*job) for job in jobs]

    for result in ordered:
        for m, r in result.items():
            collected[m].append(r)

    metrics = {m: _aggregate(sc, m, collected[m]) for m in methods}
    return MetricsReport(scenario=sc, metrics=metrics)


def power_study(
    sc: Scenario,
    methods=METHODS,
    bhm_reps: int | None = None,
    bhm_config: BhmConfig | None = None,
    alpha: float = 0.05,
    n_processes: int = 1,
) -> dict:
    """Rejection rates at level ``alpha`` (type I error under null betas)."""
    report = run_scenario(
        sc, methods=methods, bhm_reps=bhm_reps, bhm_config=bhm_config,
        alpha=alpha, n_processes=n_processes,
    )
    out = {}
    for m, metric in report.metrics.items():
        out[m] = metric.reject_rate
        if metric.reject_rate_fdr is not None:
            out[f"{m}_fdr"] = metric.reject_rate_fdr
    return out
