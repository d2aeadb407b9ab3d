"""End-to-end analysis pipeline and its artifact manifest.

Stage order: time-to-event derivation, multiple imputation of the
contact survey, per-imputation exposure estimation, per-imputation
hazard fits, and pooling of the adjusted estimates across imputations.
Each stage writes its artifacts into the output directory and registers
them in a machine-readable manifest; the first failing stage aborts the
run.  All randomness flows from the single master seed in the config,
so identical inputs and seed reproduce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .contacts import (ClusterExposure, ExposureTable, filter_entries,
                       accumulate_sums, binary_exposure, estimate_exposure,
                       read_arms_csv, read_contacts_csv, write_contacts_csv,
                       write_exposure_csv, read_exposure_csv)
from .errors import ConfigError
from .hazards import (CoefficientCurve, HazardModelSpec, aalen_fit,
                      effect_summary, jitter_ties, write_curve_csv)
from .imputation import (ImputationModelSpec, PooledEstimate, read_covariates_csv,
                         rubin_combine, run_imputation, write_fit_metadata)
from .plotdata import write_plot_csv, write_plot_svg
from .residence import (FollowUpWindow, clean_residence, derive_cohort,
                        read_infections_csv, read_residence_csv,
                        read_observations_csv, write_observations_csv,
                        summarize_cohort, SurvivalObservation, ExclusionReason)

SUMMARY_COLUMNS = ["analysis", "estimator", "estimate_pct_points", "ci_low", "ci_high"]

_Z95 = 1.96


@dataclass
class Manifest:
    command: str
    seed: int | None
    version: str = __version__
    stages: list[dict] = field(default_factory=list)

    def add_stage(self, stage: str, inputs: Sequence[str], outputs: Sequence[str],
                  seed: int | None = None) -> None:
        self.stages.append({
            "stage": stage,
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "seed": seed,
        })

    def write(self, path) -> None:
        payload = {
            "command": self.command,
            "version": self.version,
            "seed": self.seed,
            "stages": self.stages,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _require_file(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"missing required input: {what}")
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: {path}")
    return path


def parse_window(text: str) -> FollowUpWindow:
    """START:END[:CENSOR] with ISO or day-first dates."""
    from .dates import parse_date

    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError("window must be START:END or START:END:CENSOR")
    start, end = parse_date(parts[0]), parse_date(parts[1])
    censor = parse_date(parts[2]) if len(parts) == 3 and parts[2].strip() else None
    return FollowUpWindow(start, end, censor)


# ---------------------------------------------------------------------------
# Stages

def stage_tte(residence_path: str, infections_path: str, arms_path: str,
              window: FollowUpWindow, out_dir: str,
              manifest: Manifest) -> list[SurvivalObservation]:
    residence_path = _require_file(residence_path, "residence")
    infections_path = _require_file(infections_path, "infections")
    arms_path = _require_file(arms_path, "arms")
    arm_of = read_arms_csv(arms_path)
    records, parse_failures = read_residence_csv(residence_path)
    cleaning = clean_residence(records)
    infections = read_infections_csv(infections_path)
    observations = derive_cohort(cleaning.cleaned, infections, window, arm_of)
    for pid, _rule in parse_failures:
        observations.append(SurvivalObservation(
            pid, "", None, None, ExclusionReason.RESIDENCE_PARSE_ERROR.value))
    for pid, _rule in cleaning.exclusions:
        observations.append(SurvivalObservation(
            pid, "", None, None, ExclusionReason.RESIDENCE_INCONSISTENT.value))

    obs_path = os.path.join(out_dir, "observations.csv")
    write_observations_csv(observations, obs_path)
    summary_path = os.path.join(out_dir, "cohort_summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "n", "events", "incidence_pct"])
        for arm, s in summarize_cohort(observations, arm_of).items():
            writer.writerow([arm, s.n, s.events, f"{100.0 * s.incidence:.2f}"])
    manifest.add_stage("tte", [residence_path, infections_path, arms_path],
                       [obs_path, summary_path])
    return observations


def stage_impute(contacts_path: str, covariates_path: str | None,
                 spec: ImputationModelSpec, out_dir: str,
                 manifest: Manifest) -> list[str]:
    contacts_path = _require_file(contacts_path, "contacts")
    reports = read_contacts_csv(contacts_path)
    covariates = (read_covariates_csv(_require_file(covariates_path, "covariates"))
                  if covariates_path else {})
    result = run_imputation(reports, covariates, spec)
    outputs = []
    for k, dataset in enumerate(result.datasets, start=1):
        path = os.path.join(out_dir, f"contacts_imp{k}.csv")
        write_contacts_csv(dataset, path)
        outputs.append(path)
    meta_path = os.path.join(out_dir, "imputation_models.jsonl")
    write_fit_metadata(result.metadata, meta_path)
    inputs = [contacts_path] + ([covariates_path] if covariates_path else [])
    manifest.add_stage("impute", inputs, outputs + [meta_path],
                       seed=spec.master_seed)
    return outputs


def compute_exposure_table(reports, arm_of: Mapping[str, str],
                           stratum: str = "all") -> ExposureTable:
    if stratum not in ("all", "symp", "asymp"):
        raise ConfigError(f"unknown stratum {stratum!r}")
    if stratum != "all":
        wanted = stratum == "symp"
        reports = [r for r in reports if r.symptomatic == wanted]
    filtered = filter_entries(reports, day_offset=-2, time_window="AM")
    sums = accumulate_sums(filtered, arm_of)
    return estimate_exposure(sums, arm_of)


def stage_exposure(contacts_path: str, arms_path: str, stratum: str,
                   out_path: str, manifest: Manifest) -> ExposureTable:
    contacts_path = _require_file(contacts_path, "contacts")
    arm_of = read_arms_csv(_require_file(arms_path, "arms"))
    table = compute_exposure_table(read_contacts_csv(contacts_path), arm_of, stratum)
    write_exposure_csv(table, out_path)
    manifest.add_stage("exposure", [contacts_path, arms_path], [out_path])
    return table


def pool_exposure_tables(tables: Sequence[ExposureTable]) -> dict[str, PooledEstimate]:
    """Combine per-imputation exposure values.  The within-imputation
    variance of each proportion is taken as p(1-p)/D, the contact-level
    binomial approximation."""
    pooled = {}
    clusters = sorted(tables[0])
    for cluster in clusters:
        points, variances = [], []
        for table in tables:
            ce = table[cluster]
            p = float(ce.exposure)
            d = max(ce.sum_d, 1)
            points.append(p)
            variances.append(p * (1.0 - p) / d)
        pooled[cluster] = rubin_combine(points, variances)
    return pooled


def write_pooled_exposure_csv(pooled: Mapping[str, PooledEstimate],
                              arm_of: Mapping[str, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "arm", "exposure", "se", "m"])
        for cluster in sorted(pooled):
            est = pooled[cluster]
            writer.writerow([cluster, arm_of[cluster], repr(est.point),
                             repr(est.se), est.m])


def _estimate_and_var(curve: CoefficientCurve, horizon: float) -> tuple[float, float]:
    summary = effect_summary(curve, horizon)
    if len(curve) == 0:
        return summary.estimate, 0.0
    idx = int(np.searchsorted(curve.event_times, horizon, side="right")) - 1
    return summary.estimate, 1e4 * float(curve.robust_var[idx, 1, 1])


def pool_curves(curves: Sequence[CoefficientCurve]) -> CoefficientCurve:
    """Pointwise pooling of adjusted curves across imputations.  The
    event times are shared because only the exposure covariate changes
    between imputations."""
    base = curves[0]
    for other in curves[1:]:
        if not np.array_equal(other.event_times, base.event_times):
            raise ConfigError("curves to pool must share event times")
    K = len(base)
    cum = np.mean([c.cum_coeff for c in curves], axis=0)
    var = np.zeros((K, 2, 2))
    for k in range(K):
        pooled = rubin_combine([float(c.cum_coeff[k, 1]) for c in curves],
                               [float(c.robust_var[k, 1, 1]) for c in curves])
        var[k, 1, 1] = pooled.total_var
    return CoefficientCurve(base.event_times.copy(), cum, var)


# ---------------------------------------------------------------------------
# Pipeline driver

@dataclass
class PipelineConfig:
    out_dir: str
    seed: int
    arms: str | None = None
    residence: str | None = None
    infections: str | None = None
    contacts: str | None = None
    covariates: str | None = None
    observations: str | None = None      # bypass the tte stage
    exposure: str | None = None          # bypass impute + exposure stages
    window: FollowUpWindow | None = None
    m_imputations: int = 20
    estimator: str = "both"
    stratum: str = "all"
    max_time: float | None = None
    svg: bool = False
    jobs: int = 1

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read pipeline config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"pipeline config {path} is not valid JSON: {exc}") from exc
        window = None
        if raw.get("window"):
            w = raw["window"]
            window = parse_window(
                f"{w['start']}:{w['end']}:{w.get('censor', '')}"
                if w.get("censor") else f"{w['start']}:{w['end']}")
        known = {f for f in cls.__dataclass_fields__} - {"window"}
        unknown = set(raw) - known - {"window"}
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        kwargs = {k: raw[k] for k in known if k in raw}
        if "out_dir" not in kwargs:
            raise ConfigError("pipeline config needs an out_dir")
        if "seed" not in kwargs:
            raise ConfigError("pipeline config needs a seed")
        return cls(window=window, **kwargs)


@dataclass
class EstimatorResult:
    estimator: str
    estimate: float
    ci_low: float
    ci_high: float


def write_summary_csv(results: Sequence[EstimatorResult], analysis: str, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for r in results:
            writer.writerow([analysis, r.estimator, f"{r.estimate:.2f}",
                             f"{r.ci_low:.2f}", f"{r.ci_high:.2f}"])


def run_pipeline(config: PipelineConfig) -> list[EstimatorResult]:
    os.makedirs(config.out_dir, exist_ok=True)
    manifest = Manifest("pipeline", config.seed)
    if config.estimator not in ("adjusted", "naive", "both"):
        raise ConfigError(f"unknown estimator {config.estimator!r}")

    # --- observations
    if config.observations:
        obs_path = _require_file(config.observations, "observations")
        observations = read_observations_csv(obs_path)
        manifest.add_stage("tte", [obs_path], [])
    else:
        if config.window is None:
            raise ConfigError("pipeline config needs a follow-up window "
                              "when deriving observations")
        observations = stage_tte(config.residence, config.infections,
                                 config.arms, config.window,
                                 config.out_dir, manifest)

    # --- exposure tables, one per imputation
    if config.exposure:
        exp_path = _require_file(config.exposure, "exposure")
        tables = [read_exposure_csv(exp_path)]
        manifest.add_stage("exposure", [exp_path], [])
        arm_of = {c: ce.arm for c, ce in tables[0].items()}
    else:
        arm_of = read_arms_csv(_require_file(config.arms, "arms"))
        spec = ImputationModelSpec(m_imputations=config.m_imputations,
                                   master_seed=config.seed)
        imputed_paths = stage_impute(config.contacts, config.covariates, spec,
                                     config.out_dir, manifest)
        tables = []
        exposure_outputs = []
        for k, path in enumerate(imputed_paths, start=1):
            reports = read_contacts_csv(path)
            table = compute_exposure_table(reports, arm_of, config.stratum)
            out = os.path.join(config.out_dir, f"exposure_imp{k}.csv")
            write_exposure_csv(table, out)
            exposure_outputs.append(out)
            tables.append(table)
        pooled_path = os.path.join(config.out_dir, "exposure_pooled.csv")
        write_pooled_exposure_csv(pool_exposure_tables(tables), arm_of, pooled_path)
        manifest.add_stage("exposure", imputed_paths,
                           exposure_outputs + [pooled_path])

    # --- hazard fits
    jittered = jitter_ties(observations, config.seed)
    results: list[EstimatorResult] = []
    curves: dict[str, CoefficientCurve] = {}
    fit_inputs: list[str] = []
    fit_outputs: list[str] = []

    horizon = config.max_time
    if horizon is None:
        horizon = max(o.time for o in jittered if o.included)

    if config.estimator in ("naive", "both"):
        naive_spec = HazardModelSpec("binary_Z", binary_exposure(arm_of),
                                     config.max_time, config.seed)
        naive_curve = aalen_fit(jittered, naive_spec)
        curves["naive"] = naive_curve
        path = os.path.join(config.out_dir, "curve_naive.csv")
        write_curve_csv(naive_curve, path)
        fit_outputs.append(path)
        s = effect_summary(naive_curve, horizon)
        results.append(EstimatorResult("naive", s.estimate, s.ci_low, s.ci_high))

    if config.estimator in ("adjusted", "both"):
        adj_curves = []
        estimates, variances = [], []
        rows = []
        for k, table in enumerate(tables, start=1):
            adj_spec = HazardModelSpec("exposure_M", table, config.max_time,
                                       config.seed)
            curve = aalen_fit(jittered, adj_spec)
            adj_curves.append(curve)
            est, var = _estimate_and_var(curve, horizon)
            estimates.append(est)
            variances.append(var)
            rows.append((k, "adjusted", est, var))
        est_path = os.path.join(config.out_dir, "fit_estimates.csv")
        with open(est_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["imputation", "estimator", "estimate_pct", "variance_pct2"])
            for row in rows:
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
        fit_outputs.append(est_path)
        if len(adj_curves) > 1:
            pooled = rubin_combine(estimates, variances)
            point, se = pooled.point, pooled.se
            pooled_curve = pool_curves(adj_curves)
        else:
            point = estimates[0]
            se = variances[0] ** 0.5
            pooled_curve = adj_curves[0]
        curves["adjusted"] = pooled_curve
        path = os.path.join(config.out_dir, "curve_adjusted.csv")
        write_curve_csv(pooled_curve, path)
        fit_outputs.append(path)
        results.append(EstimatorResult("adjusted", point,
                                       point - _Z95 * se, point + _Z95 * se))

    summary_path = os.path.join(config.out_dir, "summary.csv")
    analysis = _analysis_label(config)
    write_summary_csv(results, analysis, summary_path)
    plot_path = os.path.join(config.out_dir, "effect_curves.csv")
    write_plot_csv(curves, plot_path)
    plot_outputs = [summary_path, plot_path]
    if config.svg:
        svg_path = os.path.join(config.out_dir, "effect_curves.svg")
        write_plot_svg(curves, svg_path)
        plot_outputs.append(svg_path)
    manifest.add_stage("fit", fit_inputs, fit_outputs + plot_outputs,
                       seed=config.seed)
    manifest.write(os.path.join(config.out_dir, "manifest.json"))
    return results


def _analysis_label(config: PipelineConfig) -> str:
    if config.window is not None:
        label = f"{config.window.study_start.isoformat()}..{config.window.study_end.isoformat()}"
        if config.window.admin_censor_date is not None:
            label += f" (censored {config.window.admin_censor_date.isoformat()})"
        return label
    return "primary"
