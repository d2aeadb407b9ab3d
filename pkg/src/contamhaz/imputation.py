"""Multiple imputation of missing contact-survey fields.

Four fields can be missing on an out-of-home entry: the visited flag,
the time of day, the contact count, and the village.  They are resolved
in that order so a count never depends on an imputed village and no
count is drawn for a location imputed as not visited:

* visited: binomial regression with log link on location type, symptom
  status and age category, stratified by recall day;
* time of day: draw from the empirical distribution of observed times
  for the location type (global distribution as a sparse-data fallback);
* count: NB2 regression with log link, one model for at-home contacts
  (symptom status, time of day, recall day, age category, gender) and
  one for out-of-home contacts (location type, symptom status, time of
  day, age category);
* village: draw from the empirical distribution of villages observed
  for out-of-home contacts by respondents of the same residence
  cluster, pooling the two pre-survey recall days.

Models are fitted once on the complete cases; each of the m completed
datasets then draws from the fitted distributions with its own random
substream, seeded as ``[master_seed, dataset_index]`` so extending m
never perturbs earlier datasets.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .contacts import ContactEntry, ContactReport, needs_village
from .errors import AnalysisError, ConfigError
from .regression import BinaryFit, CategoricalDesign, CountFit, \
    fit_log_binomial, fit_negative_binomial

logger = logging.getLogger(__name__)

AGE_CATEGORIES = ("6-35_months", "36_months-8_years", "9-10_years", "other")
UNKNOWN_COVARIATES = ("other", "unknown")


@dataclass(frozen=True)
class ImputationModelSpec:
    m_imputations: int = 20
    master_seed: int = 0
    visited_predictors: tuple[str, ...] = (
        "location_kind", "symptomatic", "age_category")
    count_predictors_outside_home: tuple[str, ...] = (
        "location_kind", "symptomatic", "time_of_day", "age_category")
    count_predictors_home: tuple[str, ...] = (
        "symptomatic", "time_of_day", "day_offset", "age_category", "gender")

    def __post_init__(self):
        if self.m_imputations < 2:
            raise ConfigError("at least two imputations are required")


@dataclass(frozen=True)
class PooledEstimate:
    """Combined point estimate and variance across imputed datasets:
    total variance = within + (1 + 1/m) * between."""

    point: float
    within_var: float
    between_var: float
    total_var: float
    m: int

    @property
    def se(self) -> float:
        return self.total_var ** 0.5


def rubin_combine(points: Sequence[float], variances: Sequence[float]) -> PooledEstimate:
    if len(points) != len(variances):
        raise AnalysisError("points and variances must align")
    m = len(points)
    if m < 2:
        raise AnalysisError("pooling requires at least two imputations")
    pts = np.asarray(points, dtype=float)
    vrs = np.asarray(variances, dtype=float)
    point = float(pts.mean())
    within = float(vrs.mean())
    between = float(pts.var(ddof=1))
    total = within + (1.0 + 1.0 / m) * between
    return PooledEstimate(point, within, between, total, m)


def _is_home(entry: ContactEntry) -> bool:
    return entry.location_kind == "own_compound"


def entry_is_complete(entry: ContactEntry) -> bool:
    """Complete means nothing left to impute: a location reported as
    not visited is complete by itself; a visited one needs time, count
    and, where the village is reported rather than structural, the
    village."""
    if _is_home(entry):
        return entry.time_of_day is not None and entry.count is not None
    if entry.visited is None:
        return False
    if entry.visited is False:
        return True
    if entry.time_of_day is None or entry.count is None:
        return False
    return not (needs_village(entry) and entry.village is None)


def _covariate_row(report: ContactReport, entry: ContactEntry,
                   covariates: Mapping[str, tuple[str, str]]) -> dict:
    age, gender = covariates.get(report.respondent_id, UNKNOWN_COVARIATES)
    return {
        "location_kind": entry.location_kind,
        "symptomatic": str(report.symptomatic),
        "age_category": age,
        "gender": gender,
        "time_of_day": entry.time_of_day,
        "day_offset": str(report.day_offset),
    }


@dataclass
class _FittedModels:
    visited: dict[int, tuple[CategoricalDesign, BinaryFit]]
    time_dists: dict[str, tuple[list[str], np.ndarray]]
    time_global: tuple[list[str], np.ndarray]
    count_home: tuple[CategoricalDesign, CountFit] | None
    count_outside: tuple[CategoricalDesign, CountFit] | None
    village_dists: dict[str, tuple[list[str], np.ndarray]]
    village_global: tuple[list[str], np.ndarray] | None
    metadata: list[dict]


def fit_visited_model(
    reports: Sequence[ContactReport],
    covariates: Mapping[str, tuple[str, str]],
    spec: ImputationModelSpec,
) -> dict[int, tuple[CategoricalDesign, BinaryFit]]:
    """Per recall-day stratum, fit the visited-indicator model on
    complete cases."""
    strata: dict[int, list[dict]] = {}
    outcomes: dict[int, list[float]] = {}
    for report in reports:
        for entry in report.entries:
            if _is_home(entry) or entry.visited is None:
                continue
            strata.setdefault(report.day_offset, []).append(
                _covariate_row(report, entry, covariates))
            outcomes.setdefault(report.day_offset, []).append(float(entry.visited))
    models = {}
    for day, rows in sorted(strata.items()):
        design = CategoricalDesign.from_rows(rows, spec.visited_predictors)
        fit = fit_log_binomial(design.matrix(rows), np.asarray(outcomes[day]))
        models[day] = (design, fit)
    return models


def _empirical(values: Sequence[str]) -> tuple[list[str], np.ndarray]:
    uniq = sorted(set(values))
    counts = np.array([sum(1 for v in values if v == u) for u in uniq], dtype=float)
    return uniq, counts / counts.sum()


def _time_distributions(reports: Sequence[ContactReport]):
    by_kind: dict[str, list[str]] = {}
    all_times: list[str] = []
    for report in reports:
        for entry in report.entries:
            if entry.time_of_day is not None:
                by_kind.setdefault(entry.location_kind, []).append(entry.time_of_day)
                all_times.append(entry.time_of_day)
    if not all_times:
        raise AnalysisError("no observed times of day anywhere in the survey")
    return ({kind: _empirical(vals) for kind, vals in by_kind.items()},
            _empirical(all_times))


def _village_distributions(reports: Sequence[ContactReport]):
    by_home: dict[str, list[str]] = {}
    all_villages: list[str] = []
    for report in reports:
        if report.day_offset not in (-1, -2):
            continue
        for entry in report.entries:
            if _is_home(entry) or not needs_village(entry):
                continue
            if entry.visited is not True or entry.village is None:
                continue
            by_home.setdefault(report.residence_cluster, []).append(entry.village)
            all_villages.append(entry.village)
    return ({home: _empirical(vals) for home, vals in by_home.items()},
            _empirical(all_villages) if all_villages else None)


def fit_count_model(
    reports: Sequence[ContactReport],
    covariates: Mapping[str, tuple[str, str]],
    spec: ImputationModelSpec,
    home: bool,
) -> tuple[CategoricalDesign, CountFit] | None:
    rows, counts = [], []
    for report in reports:
        for entry in report.entries:
            if _is_home(entry) != home or entry.count is None:
                continue
            if not home and entry.visited is not True:
                continue
            if entry.time_of_day is None:
                continue
            rows.append(_covariate_row(report, entry, covariates))
            counts.append(entry.count)
    if not rows:
        return None
    predictors = (spec.count_predictors_home if home
                  else spec.count_predictors_outside_home)
    design = CategoricalDesign.from_rows(rows, predictors)
    fit = fit_negative_binomial(design.matrix(rows), np.asarray(counts, dtype=float))
    return design, fit


def _fit_all(reports, covariates, spec) -> _FittedModels:
    visited = fit_visited_model(reports, covariates, spec)
    time_dists, time_global = _time_distributions(reports)
    county = fit_count_model(reports, covariates, spec, home=True)
    counto = fit_count_model(reports, covariates, spec, home=False)
    village_dists, village_global = _village_distributions(reports)
    metadata = []
    for day, (_, fit) in sorted(visited.items()):
        metadata.append({"model": f"visited_day_{day}", **fit.metadata()})
    if county is not None:
        metadata.append({"model": "count_home", **county[1].metadata()})
    if counto is not None:
        metadata.append({"model": "count_outside_home", **counto[1].metadata()})
    return _FittedModels(visited, time_dists, time_global, county, counto,
                         village_dists, village_global, metadata)


def _copy_reports(reports: Sequence[ContactReport]) -> list[ContactReport]:
    return [replace(r, entries=[replace(e) for e in r.entries]) for r in reports]


def _impute_visited(reports, models, covariates, rng) -> None:
    for report in reports:
        for entry in report.entries:
            if _is_home(entry) or entry.visited is not None:
                continue
            if report.day_offset not in models:
                raise AnalysisError(
                    f"no complete visited indicators for recall day {report.day_offset}")
            design, fit = models[report.day_offset]
            p = fit.predict(design.matrix([_covariate_row(report, entry, covariates)]))[0]
            entry.visited = bool(rng.random() < p)


def impute_time_of_day(reports: Sequence[ContactReport],
                       rng: np.random.Generator,
                       dists=None, global_dist=None) -> Sequence[ContactReport]:
    """Fill missing times of day in place by sampling the per-location
    empirical distribution of observed times."""
    if dists is None:
        dists, global_dist = _time_distributions(reports)
    for report in reports:
        for entry in report.entries:
            if entry.time_of_day is not None or entry.visited is False:
                continue
            dist = dists.get(entry.location_kind)
            if dist is None:
                logger.warning("no observed times for %s; using the global "
                               "time distribution", entry.location_kind)
                dist = global_dist
            values, probs = dist
            entry.time_of_day = values[rng.choice(len(values), p=probs)]
    return reports


def _impute_counts(reports, models: _FittedModels, covariates, rng) -> None:
    for report in reports:
        for entry in report.entries:
            if entry.count is not None or entry.visited is False:
                continue
            fitted = models.count_home if _is_home(entry) else models.count_outside
            if fitted is None:
                raise AnalysisError("no complete counts to fit the count model on")
            design, fit = fitted
            X = design.matrix([_covariate_row(report, entry, covariates)])
            entry.count = int(fit.sample(rng, X)[0])


def impute_village(reports: Sequence[ContactReport],
                   rng: np.random.Generator,
                   dists=None, global_dist=None) -> Sequence[ContactReport]:
    """Fill missing villages in place from the residence-specific
    empirical distribution of visited villages."""
    if dists is None:
        dists, global_dist = _village_distributions(reports)
    for report in reports:
        for entry in report.entries:
            if not needs_village(entry) or entry.village is not None:
                continue
            if entry.visited is False:
                continue
            dist = dists.get(report.residence_cluster)
            if dist is None:
                if global_dist is None:
                    raise AnalysisError("no observed villages anywhere in the survey")
                logger.warning("no observed villages for residents of %s; using "
                               "the global distribution", report.residence_cluster)
                dist = global_dist
            values, probs = dist
            entry.village = values[rng.choice(len(values), p=probs)]
    return reports


@dataclass
class ImputationResult:
    datasets: list[list[ContactReport]]
    metadata: list[dict]


def run_imputation(
    reports: Sequence[ContactReport],
    covariates: Mapping[str, tuple[str, str]],
    spec: ImputationModelSpec,
) -> ImputationResult:
    """Produce m completed copies of the survey.

    Observed cells are never modified; each dataset k draws from its own
    generator seeded with ``[master_seed, k]``.
    """
    models = _fit_all(reports, covariates, spec)
    datasets = []
    for k in range(spec.m_imputations):
        rng = np.random.default_rng([spec.master_seed, k])
        completed = _copy_reports(reports)
        _impute_visited(completed, models.visited, covariates, rng)
        impute_time_of_day(completed, rng, models.time_dists, models.time_global)
        _impute_counts(completed, models, covariates, rng)
        impute_village(completed, rng, models.village_dists, models.village_global)
        for report in completed:
            for entry in report.entries:
                if not entry_is_complete(entry):
                    raise AnalysisError(
                        f"entry left incomplete for respondent {report.respondent_id}")
        datasets.append(completed)
    return ImputationResult(datasets, models.metadata)


def write_fit_metadata(metadata: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in metadata:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Covariates file: participant_id, age_category, gender

def read_covariates_csv(path) -> dict[str, tuple[str, str]]:
    import csv

    covariates: dict[str, tuple[str, str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "participant_id" not in reader.fieldnames:
            raise ConfigError(f"covariates file {path}: missing header")
        for row in reader:
            pid = (row.get("participant_id") or "").strip()
            age = (row.get("age_category") or "").strip() or UNKNOWN_COVARIATES[0]
            gender = (row.get("gender") or "").strip() or UNKNOWN_COVARIATES[1]
            covariates[pid] = (age, gender)
    return covariates
