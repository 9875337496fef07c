"""Command-line interface.

Subcommands: ``analyze`` (risk curves, cut-offs, net gain, calibration),
``compare`` (bootstrap net-gain comparison of two markers), ``scan-minp``
(minimum-p-value cut-off scan), ``bhm`` (Bayesian threshold model), and
``simulate`` (operating-characteristics harness).  Exit codes: 0 success,
2 usage error, 3 data validation error, 4 numerical failure.  On failure a
machine-readable error JSON is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bhm import BhmConfig, run_mcmc
from .calibration import calibrate
from .cutoff import classify_thresholds, cutoff_se, formula_cutoff
from .data_model import AnalysisDataset, ColumnMap, OutcomeSpec, load_csv
from .errors import DataValidationError, NoInteractionError, NumericalError, PredmarkError
from .marginal_risk import default_grid, risk_difference_curve
from .minp_scan import candidate_cutoffs, scan
from .model_fit import fit_dataset, interaction_test
from .netgain import DeltaSignRule, bootstrap_compare, net_gain, subject_deltas
from .report import (
    build_report,
    error_json,
    fingerprint_file,
    model_summary,
    write_report,
)
from .sim_harness import METHODS, Scenario, preset_scenario, run_scenario
from .survival import km_median

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_data_flags(p: argparse.ArgumentParser, marker_required: bool = True):
    p.add_argument("--data", required=True, help="input CSV (UTF-8, header row)")
    p.add_argument("--outcome-type", required=True,
                   choices=["continuous", "binary", "survival"])
    p.add_argument("--outcome", help="outcome column (continuous/binary)")
    p.add_argument("--time", help="survival time column")
    p.add_argument("--event", help="survival event indicator column")
    p.add_argument("--treatment", required=True, help="0/1 treatment column")
    p.add_argument("--biomarker", required=marker_required, help="biomarker column")
    p.add_argument("--covariates", default="",
                   help="comma-separated covariate columns")
    p.add_argument("--subject-id", help="subject identifier column")
    p.add_argument("--landmark", type=float,
                   help="landmark time (survival; default: pooled KM median)")
    p.add_argument("--direction", choices=["higher", "lower"], default="higher",
                   help="which outcome direction is worse")
    p.add_argument("--normal-score", action="store_true",
                   help="map a continuous outcome to empirical normal scores")


def _dataset_from_args(args, biomarker: str | None = None) -> AnalysisDataset:
    fam = args.outcome_type
    if fam == "survival":
        if not args.time or not args.event:
            raise UsageError("survival outcome requires --time and --event")
    elif not args.outcome:
        raise UsageError(f"{fam} outcome requires --outcome")
    spec = OutcomeSpec(
        family=fam,
        worse_direction=args.direction,
        landmark_time=args.landmark if fam == "survival" else None,
        normal_score=getattr(args, "normal_score", False),
    )
    covs = tuple(c.strip() for c in args.covariates.split(",") if c.strip())
    schema = ColumnMap(
        treatment=args.treatment,
        biomarker=biomarker or args.biomarker,
        outcome=args.outcome,
        time=args.time,
        event=args.event,
        subject_id=args.subject_id,
        covariates=covs,
    )
    return load_csv(args.data, schema, spec)


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze(args) -> int:
    ds = _dataset_from_args(args)
    out = _out_dir(args)
    model = fit_dataset(ds)
    test = interaction_test(model)

    landmark = None
    if ds.family == "survival":
        landmark = args.landmark if args.landmark is not None else km_median(ds.time, ds.event)

    grid = default_grid(ds, args.grid)
    curves = risk_difference_curve(model, grid, ds, landmark=landmark)

    d = model.design
    formula_value = se_formula = None
    try:
        formula_value = formula_cutoff(
            float(model.beta[d.treatment_idx]), float(model.beta[d.interaction_idx])
        )
        se_formula = cutoff_se(model)
    except NoInteractionError:
        pass
    cut = classify_thresholds(curves, formula_value=formula_value, use_ci=args.ci_thresholds)

    deltas = subject_deltas(model, ds, landmark=landmark)
    gain = net_gain(model, ds, rule=DeltaSignRule(), landmark=landmark, deltas=deltas)

    cal = calibrate(model, ds, n_groups=args.groups, m_bins=args.bins, landmark=landmark)

    curves_csv = out / "curves.csv"
    curves.write_csv(curves_csv)
    cal_csv = out / "calibration.csv"
    cal.write_csv(cal_csv)
    files = {"curves": str(curves_csv), "calibration": str(cal_csv)}
    if args.svg:
        from .svg_plot import render_curves_svg

        svg_path = out / "curves.svg"
        render_curves_svg(
            curves, svg_path,
            cutoff=cut.theoretical,
            positive_threshold=cut.positive_threshold,
            negative_threshold=cut.negative_threshold,
        )
        files["svg"] = str(svg_path)

    cut_dict = cut.to_dict()
    cut_dict["formula"] = formula_value
    cut_dict["se_formula"] = se_formula
    report = build_report(
        fingerprint=fingerprint_file(args.data),
        model=model_summary(model, test),
        cutoffs=cut_dict,
        netgain=gain.to_dict(),
        calibration=cal.to_dict(),
        landmark=landmark,
        seed=args.seed,
        files=files,
    )
    report_path = out / "report.json"
    write_report(report, report_path)

    print(f"predmark {__version__} analysis ({ds.family}, n={ds.n})")
    if landmark is not None:
        print(f"  landmark time        : {landmark:.6g}")
    print(f"  interaction estimate : {test.estimate:+.4g} (se {test.se:.4g}, p {test.p:.4g})")
    if cut.theoretical is not None:
        rng_note = "inside" if cut.within_range else "OUTSIDE"
        print(f"  theoretical cut-off  : {cut.theoretical:.6g} ({rng_note} observed range)")
    else:
        print("  theoretical cut-off  : not identified (curves do not cross)")
    if formula_value is not None:
        print(f"  formula cut-off      : {formula_value:.6g} (se {se_formula:.4g})")
    if cut.positive_threshold is not None:
        print(f"  positive threshold   : {cut.positive_threshold:.6g}")
    if cut.negative_threshold is not None:
        print(f"  negative threshold   : {cut.negative_threshold:.6g}")
    print(f"  net gain (delta-sign): theta={gain.theta:.6g} "
          f"(B_neg={gain.b_neg:.6g}, P_neg={gain.p_neg:.6g})")
    gaps = [abs(r.mean_predicted - r.observed) for r in cal.rows if r.observed is not None]
    if gaps:
        print(f"  calibration max gap  : {max(gaps):.4g} over {cal.n_groups} groups")
    print(f"  report written to    : {report_path}")
    return 0


def cmd_compare(args) -> int:
    if args.reps < 100:
        raise UsageError("--reps must be at least 100")
    out = _out_dir(args)
    ds_a = _dataset_from_args(args, biomarker=args.biomarker)
    ds_b = _dataset_from_args(args, biomarker=args.biomarker2)
    model_a = fit_dataset(ds_a)
    model_b = fit_dataset(ds_b)
    result = bootstrap_compare(
        model_a, model_b, ds_a, ds_b, reps=args.reps, seed=args.seed
    )
    comparison = {
        "marker_a": args.biomarker,
        "marker_b": args.biomarker2,
        **result.to_dict(),
    }
    json_path = out / "comparison.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(comparison, fh, indent=2)
    csv_path = out / "comparison.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("marker,theta,se,ci_lo,ci_hi\n")
        fh.write(f"{args.biomarker},{result.theta_a:.10g},{result.theta_a_se:.10g},"
                 f"{result.theta_a_ci[0]:.10g},{result.theta_a_ci[1]:.10g}\n")
        fh.write(f"{args.biomarker2},{result.theta_b:.10g},{result.theta_b_se:.10g},"
                 f"{result.theta_b_ci[0]:.10g},{result.theta_b_ci[1]:.10g}\n")
        fh.write(f"difference,{result.delta_theta:.10g},{result.se:.10g},"
                 f"{result.ci_lo:.10g},{result.ci_hi:.10g}\n")
    print(f"theta[{args.biomarker}] = {result.theta_a:.6g}, "
          f"theta[{args.biomarker2}] = {result.theta_b:.6g}")
    print(f"difference = {result.delta_theta:+.6g} "
          f"(95% CI {result.ci_lo:+.6g} .. {result.ci_hi:+.6g}, "
          f"{result.reps_used} replicates)")
    print(f"written: {json_path}, {csv_path}")
    return 0


def cmd_scan_minp(args) -> int:
    out = _out_dir(args)
    ds = _dataset_from_args(args)
    cands = candidate_cutoffs(
        ds, mode=args.mode, lo_frac=args.lo_frac, hi_frac=args.hi_frac, step=args.step
    )
    result = scan(ds, candidates=cands)
    csv_path = out / "scan.csv"
    result.write_csv(csv_path)
    json_path = out / "scan.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2)
    print(f"scanned {len(result.candidates)} candidates "
          f"({result.n_dropped} dropped)")
    print(f"chosen cut-off {result.chosen.cutoff:.6g}: "
          f"p_raw={result.chosen.p_raw:.4g}, p_fdr={result.chosen.p_fdr:.4g}")
    print(f"written: {csv_path}, {json_path}")
    return 0


def cmd_bhm(args) -> int:
    if args.iterations <= args.burn_in:
        raise UsageError("--iterations must exceed --burn-in")
    out = _out_dir(args)
    ds = _dataset_from_args(args)
    cfg = BhmConfig(
        iterations=args.iterations,
        burn_in=args.burn_in,
        thin=args.thin,
        proposal_sd_c=args.proposal_sd_c,
        proposal_sd_q=args.proposal_sd_q,
        proposal_sd_beta=args.proposal_sd_beta,
        seed=args.seed,
        family="cox" if args.outcome_type == "survival" else "binary",
        q_max=args.q_max,
        c_lo=args.c_lo,
        c_hi=args.c_hi,
        threshold_likelihood_weight=args.likelihood_weight,
    )
    post = run_mcmc(ds, cfg)
    json_path = out / "posterior.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(post.to_dict(), fh, indent=2)
    files = [str(json_path)]
    if args.samples_csv:
        samples_path = out / "samples.csv"
        post.write_samples_csv(samples_path)
        files.append(str(samples_path))
    print(f"threshold estimate: {post.c_hat_marker:.6g} "
          f"(percentile {post.c_hat:.4g}; "
          f"95% CrI {post.c_ci_marker[0]:.6g} .. {post.c_ci_marker[1]:.6g})")
    if post.conditional is not None:
        it = post.conditional.interaction
        print(f"conditional interaction: {it.estimate:+.4g} "
              f"(se {it.se:.4g}, p {it.p:.4g})")
    print(f"acceptance rates: {post.acceptance}")
    print(f"written: {', '.join(files)}")
    return 0


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    if args.scenario:
        sc = Scenario.from_json(args.scenario)
    elif args.preset and args.cutoff is not None:
        sc = preset_scenario(args.preset, args.cutoff)
    else:
        raise UsageError("supply --scenario FILE or --preset with --cutoff")
    if args.reps:
        from dataclasses import replace

        sc = replace(sc, reps=args.reps)
    if args.seed is not None:
        from dataclasses import replace

        sc = replace(sc, seed=args.seed)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {METHODS}")
    bhm_cfg = BhmConfig(iterations=args.bhm_iterations, burn_in=args.bhm_burn_in)
    report = run_scenario(
        sc,
        methods=methods,
        bhm_reps=args.bhm_reps,
        bhm_config=bhm_cfg,
        alpha=args.alpha,
        n_processes=args.threads,
    )
    csv_path = out / "metrics.csv"
    report.write_csv(csv_path)
    json_path = out / "metrics.json"
    report.write_json(json_path)
    print(f"scenario: effect={sc.effect} true_cutoff={sc.true_cutoff} "
          f"n={sc.n} reps={sc.reps}")
    for m, v in report.metrics.items():
        parts = [f"bias={v.bias:+.4g}", f"sd={v.sd:.4g}", f"rmse={v.sqrt_mse:.4g}"]
        if v.coverage_95 is not None:
            parts.append(f"coverage={v.coverage_95:.3f}")
        parts.append(f"net_gain={v.mean_net_gain:.4g}")
        if v.reject_rate is not None:
            parts.append(f"reject={v.reject_rate:.3f}")
        if v.reject_rate_fdr is not None:
            parts.append(f"reject_fdr={v.reject_rate_fdr:.3f}")
        print(f"  {m:10s} " + " ".join(parts))
    if not report.valid:
        print("  WARNING: a method exceeded the 5% replicate-failure budget")
    print(f"written: {csv_path}, {json_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predmark",
        description="Predictive-biomarker risk curves, cut-offs, and comparisons",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="fit, curves, cut-offs, net gain, calibration")
    _add_data_flags(pa)
    pa.add_argument("--grid", type=int, default=100, help="grid points (default 100)")
    pa.add_argument("--groups", type=int, default=5, help="calibration groups")
    pa.add_argument("--bins", type=int, default=4, help="continuous-covariate bins")
    pa.add_argument("--ci-thresholds", action="store_true",
                    help="classify thresholds by the CI of the risk difference")
    pa.add_argument("--svg", action="store_true", help="also write curves.svg")
    pa.add_argument("--out-dir", required=True)
    pa.add_argument("--seed", type=int)
    pa.set_defaults(func=cmd_analyze)

    pc = sub.add_parser("compare", help="bootstrap net-gain comparison of two markers")
    _add_data_flags(pc)
    pc.add_argument("--biomarker2", required=True, help="second biomarker column")
    pc.add_argument("--reps", type=int, default=1000, help="bootstrap replicates")
    pc.add_argument("--out-dir", required=True)
    pc.add_argument("--seed", type=int)
    pc.set_defaults(func=cmd_compare)

    ps = sub.add_parser("scan-minp", help="minimum-p-value cut-off scan")
    _add_data_flags(ps)
    ps.add_argument("--mode", choices=["percentile", "observed"], default="percentile")
    ps.add_argument("--lo-frac", type=float, default=0.10)
    ps.add_argument("--hi-frac", type=float, default=0.90)
    ps.add_argument("--step", type=float, default=0.01)
    ps.add_argument("--out-dir", required=True)
    ps.add_argument("--seed", type=int)
    ps.set_defaults(func=cmd_scan_minp)

    pb = sub.add_parser("bhm", help="Bayesian hierarchical threshold model")
    _add_data_flags(pb)
    pb.add_argument("--iterations", type=int, default=10000)
    pb.add_argument("--burn-in", type=int, default=2000)
    pb.add_argument("--thin", type=int, default=1)
    pb.add_argument("--proposal-sd-c", type=float, default=0.3)
    pb.add_argument("--proposal-sd-q", type=float, default=0.3)
    pb.add_argument("--proposal-sd-beta", type=float, default=0.1)
    pb.add_argument("--q-max", type=float, default=BhmConfig.q_max)
    pb.add_argument("--c-lo", type=float, default=BhmConfig.c_lo)
    pb.add_argument("--c-hi", type=float, default=BhmConfig.c_hi)
    pb.add_argument("--likelihood-weight", type=float,
                    default=BhmConfig.threshold_likelihood_weight)
    pb.add_argument("--samples-csv", action="store_true",
                    help="also write the retained samples")
    pb.add_argument("--out-dir", required=True)
    pb.add_argument("--seed", type=int)
    pb.set_defaults(func=cmd_bhm)

    pm = sub.add_parser("simulate", help="operating-characteristics harness")
    pm.add_argument("--scenario", help="scenario JSON file")
    pm.add_argument("--preset", choices=["strong", "weak", "null", "power"])
    pm.add_argument("--cutoff", type=float,
                    help="designed cut-off for --preset (-0.85, 0.2, or 1.25)")
    pm.add_argument("--methods", default="riskcurve,minp,bhm")
    pm.add_argument("--reps", type=int)
    pm.add_argument("--bhm-reps", type=int)
    pm.add_argument("--bhm-iterations", type=int, default=5000)
    pm.add_argument("--bhm-burn-in", type=int, default=1000)
    pm.add_argument("--alpha", type=float, default=0.05)
    pm.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    pm.add_argument("--out-dir", required=True)
    pm.add_argument("--seed", type=int)
    pm.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(error_json(exc, EXIT_USAGE))
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(error_json(exc, EXIT_DATA))
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(error_json(exc, EXIT_NUMERIC))
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(error_json(exc, EXIT_USAGE))
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
