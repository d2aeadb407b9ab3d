"""Command-line surface.

Subcommands mirror the pipeline stages plus the simulation tools:

  tte        residence + infections -> survival observations
  impute     contact survey -> m completed datasets
  exposure   completed contacts -> per-cluster exposure table
  fit        observations + exposure -> coefficient curves and summary
  simulate   scenario -> trajectories, synthetic observations, truth
  oracle     replicated simulate-and-refit comparison study
  pipeline   all analysis stages driven by one JSON config

Exit codes: 0 success, 1 analysis error, 2 configuration/input error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import __version__
from .contacts import read_arms_csv
from .errors import ConfigError, ContamhazError
from .hazards import write_curve_csv
from .pipeline import (Manifest, PipelineConfig, parse_window, run_pipeline,
                       stage_exposure, stage_impute, stage_tte, write_summary_csv)
from .imputation import ImputationModelSpec
from .plotdata import write_plot_csv, write_plot_svg
from .residence import write_observations_csv
from .simulate import (cluster_label, load_scenario, oracle_study, simulate,
                       true_estimand)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contamhaz",
        description="Overall-effect estimation under cross-cluster contamination")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tte", help="derive time-to-event observations")
    p.add_argument("--residence", required=True)
    p.add_argument("--infections", required=True)
    p.add_argument("--arms", required=True)
    p.add_argument("--window", required=True, metavar="START:END[:CENSOR]")
    p.add_argument("--out", default=".")

    p = sub.add_parser("impute", help="multiply impute the contact survey")
    p.add_argument("--contacts", required=True)
    p.add_argument("--covariates")
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")

    p = sub.add_parser("exposure", help="estimate per-cluster treatment exposure")
    p.add_argument("--contacts", required=True)
    p.add_argument("--arms", required=True)
    p.add_argument("--stratum", choices=["symp", "asymp", "all"], default="all")
    p.add_argument("--out", default=".")

    p = sub.add_parser("fit", help="fit the additive-hazards models")
    p.add_argument("--observations", required=True)
    p.add_argument("--exposure", required=True)
    p.add_argument("--estimator", choices=["adjusted", "naive", "both"],
                   default="both")
    p.add_argument("--max-time", type=float, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--svg", action="store_true",
                   help="also render the effect curves as SVG")
    p.add_argument("--out", default=".")

    p = sub.add_parser("simulate", help="run one multi-cluster epidemic")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")

    p = sub.add_parser("oracle", help="replicated estimator-verification study")
    p.add_argument("--scenario", required=True)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=".")

    p = sub.add_parser("pipeline", help="run every analysis stage")
    p.add_argument("--config", required=True)
    return parser


def _cmd_tte(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest("tte", None)
    window = parse_window(args.window)
    stage_tte(args.residence, args.infections, args.arms, window, args.out, manifest)
    manifest.write(os.path.join(args.out, "manifest.json"))
    return 0


def _cmd_impute(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest("impute", args.seed)
    spec = ImputationModelSpec(m_imputations=args.m, master_seed=args.seed)
    stage_impute(args.contacts, args.covariates, spec, args.out, manifest)
    manifest.write(os.path.join(args.out, "manifest.json"))
    return 0


def _cmd_exposure(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest("exposure", None)
    out_path = os.path.join(args.out, "exposure.csv")
    stage_exposure(args.contacts, args.arms, args.stratum, out_path, manifest)
    manifest.write(os.path.join(args.out, "manifest.json"))
    return 0


def _cmd_fit(args) -> int:
    config = PipelineConfig(
        out_dir=args.out, seed=args.seed, observations=args.observations,
        exposure=args.exposure, estimator=args.estimator,
        max_time=args.max_time, svg=args.svg)
    results = run_pipeline(config)
    for r in results:
        print(f"{r.estimator}: {r.estimate:.2f} [{r.ci_low:.2f}, {r.ci_high:.2f}]")
    return 0


def _cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    params = load_scenario(args.scenario)
    import dataclasses
    params = dataclasses.replace(params, seed=args.seed)
    sim = simulate(params)
    manifest = Manifest("simulate", args.seed)

    traj_path = os.path.join(args.out, "trajectories.csv")
    with open(traj_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "cluster", "arm", "S", "Y", "R"])
        arms = params.arms
        for i, t in enumerate(sim.times):
            for j in range(len(params.clusters)):
                writer.writerow([repr(float(t)), cluster_label(j), arms[j],
                                 repr(float(sim.S[i, j])), repr(float(sim.Y[i, j])),
                                 repr(float(sim.R[i, j]))])

    obs_path = os.path.join(args.out, "observations.csv")
    write_observations_csv(sim.to_observations(), obs_path)

    truth_path = os.path.join(args.out, "truth.csv")
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "hazard_difference", "cumulative_pct"])
        cum = 0.0
        for i, t in enumerate(sim.times):
            if i > 0:
                cum += 0.5 * (sim.beta[i] + sim.beta[i - 1]) * (sim.times[i] - sim.times[i - 1])
            writer.writerow([repr(float(t)), repr(float(sim.beta[i])),
                             repr(100.0 * cum)])

    exp_path = os.path.join(args.out, "exposure_true.csv")
    exposures = params.true_exposures()
    with open(exp_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "arm", "pct_in_treated", "pct_from_visitors",
                         "exposure"])
        for j in range(len(params.clusters)):
            label = cluster_label(j)
            writer.writerow([label, arms[j], repr(100.0 * exposures[label]),
                             repr(0.0), repr(exposures[label])])

    manifest.add_stage("simulate", [args.scenario],
                       [traj_path, obs_path, truth_path, exp_path], seed=args.seed)
    manifest.write(os.path.join(args.out, "manifest.json"))
    return 0


def _cmd_oracle(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    params = load_scenario(args.scenario)
    report = oracle_study(params, args.replicates, args.seed, jobs=args.jobs)
    manifest = Manifest("oracle", args.seed)

    rows_path = os.path.join(args.out, "oracle_report.csv")
    with open(rows_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "truth_pct", "adjusted_pct", "adjusted_ci_low",
                         "adjusted_ci_high", "naive_pct", "covered"])
        for row in report.rows:
            writer.writerow([row.replicate, repr(row.truth),
                             repr(row.adjusted.estimate), repr(row.adjusted.ci_low),
                             repr(row.adjusted.ci_high), repr(row.naive.estimate),
                             int(row.covered)])

    summary_path = os.path.join(args.out, "oracle_summary.txt")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(report.summary_text() + "\n")
    print(report.summary_text())
    manifest.add_stage("oracle", [args.scenario], [rows_path, summary_path],
                       seed=args.seed)
    manifest.write(os.path.join(args.out, "manifest.json"))
    return 0


def _cmd_pipeline(args) -> int:
    config = PipelineConfig.from_json(args.config)
    results = run_pipeline(config)
    for r in results:
        print(f"{r.estimator}: {r.estimate:.2f} [{r.ci_low:.2f}, {r.ci_high:.2f}]")
    return 0


_COMMANDS = {
    "tte": _cmd_tte,
    "impute": _cmd_impute,
    "exposure": _cmd_exposure,
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "oracle": _cmd_oracle,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 2
    except ContamhazError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
