"""Treatment-exposure estimation from contact surveys.

Each respondent reports, per recall day, the numbers of people spoken
with at home and at visited locations.  A cluster's treatment exposure
is the proportion of its residents' contacts made with treated
clusters.  Contacts reported by opposite-arm respondents while visiting
a cluster's compounds are used to correct that proportion: added to the
numerator for control clusters, subtracted for treated ones, since the
hosts report those conversations as own-compound contacts.

All arithmetic on the ingredient sums is integer based and the exposure
values are exact rationals; convert to float only at the model
boundary.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import AnalysisError, ConfigError, MissingDataError

logger = logging.getLogger(__name__)

LOCATION_KINDS = (
    "own_compound", "other_compound", "market", "mosque_church",
    "field", "school", "public_place", "outside_zone", "other",
)
TIMES_OF_DAY = ("AM", "PM", "BOTH")
DAY_OFFSETS = (0, -1, -2)

TREATED = "treated"
CONTROL = "control"

# location kinds whose village field is structural rather than reported
_NO_VILLAGE_KINDS = ("own_compound", "outside_zone")


@dataclass
class ContactEntry:
    location_kind: str
    village: str | None = None
    time_of_day: str | None = None
    count: int | None = None
    visited: bool | None = None


@dataclass
class ContactReport:
    respondent_id: str
    residence_cluster: str
    symptomatic: bool
    day_offset: int
    entries: list[ContactEntry] = field(default_factory=list)


def needs_village(entry: ContactEntry) -> bool:
    return entry.location_kind not in _NO_VILLAGE_KINDS


@dataclass
class VisitorLedger:
    """Per-cluster totals of contacts reported by opposite-arm visitors
    inside the cluster's compounds, keyed by the visitor's arm."""

    from_treated: dict[str, int] = field(default_factory=dict)
    from_control: dict[str, int] = field(default_factory=dict)

    def add(self, host_cluster: str, visitor_arm: str, count: int) -> None:
        book = self.from_treated if visitor_arm == TREATED else self.from_control
        book[host_cluster] = book.get(host_cluster, 0) + count


@dataclass
class ExposureSums:
    sum_t: dict[str, int]
    sum_d: dict[str, int]
    ledger: VisitorLedger


@dataclass(frozen=True)
class ClusterExposure:
    cluster: str
    arm: str
    sum_t: int
    sum_d: int
    visitor_term: int
    exposure: Fraction


ExposureTable = dict[str, ClusterExposure]


def filter_entries(
    reports: Sequence[ContactReport],
    day_offset: int = -2,
    time_window: str = "AM",
) -> list[ContactReport]:
    """Keep only the recall day and time window used for estimation.

    BOTH-coded entries count once, in the AM window, so the two windows
    never double count a contact.
    """
    matching = {"AM": ("AM", "BOTH"), "PM": ("PM",)}[time_window]
    out = []
    for report in reports:
        if report.day_offset != day_offset:
            continue
        kept = [e for e in report.entries if e.time_of_day in matching]
        out.append(replace(report, entries=kept))
    return out


def accumulate_sums(
    reports: Sequence[ContactReport],
    arm_of: Mapping[str, str],
) -> ExposureSums:
    """Tally the exposure ingredients cluster by cluster.

    For residents of cluster j: every resolved contact adds to
    ``sum_d[j]``; contacts located in treated villages (own-compound
    contacts count when j itself is treated) add to ``sum_t[j]``.
    Compound visits to a cluster of the opposite arm additionally enter
    the host cluster's visitor ledger under the visitor's arm.
    Reports from residents of non-trial villages are ignored.
    """
    sum_t: dict[str, int] = {}
    sum_d: dict[str, int] = {}
    ledger = VisitorLedger()
    for report in reports:
        home = report.residence_cluster
        arm = arm_of.get(home)
        if arm is None:
            continue
        sum_t.setdefault(home, 0)
        sum_d.setdefault(home, 0)
        for entry in report.entries:
            if entry.visited is False:
                continue
            if entry.visited is None and needs_village(entry):
                raise MissingDataError(
                    f"respondent {report.respondent_id}: unresolved visited flag; "
                    "run imputation first")
            village = home if entry.location_kind == "own_compound" else entry.village
            if village is None and needs_village(entry):
                raise MissingDataError(
                    f"respondent {report.respondent_id}: unresolved village; "
                    "run imputation first")
            if entry.count is None:
                raise MissingDataError(
                    f"respondent {report.respondent_id}: unresolved contact count; "
                    "run imputation first")
            if entry.count == 0:
                continue
            sum_d[home] += entry.count
            village_arm = arm_of.get(village) if village is not None else None
            if village_arm == TREATED:
                sum_t[home] += entry.count
            if (entry.location_kind == "other_compound"
                    and village_arm is not None and village_arm != arm):
                ledger.add(village, arm, entry.count)
    return ExposureSums(sum_t, sum_d, ledger)


def estimate_exposure(
    sums: ExposureSums,
    arm_of: Mapping[str, str],
) -> ExposureTable:
    """Visitor-adjusted exposure per cluster.

    Control cluster: (sum_t + visits by treated residents) / sum_d.
    Treated cluster: (sum_t - visits by control residents) / sum_d.
    Values are clamped into [0, 1] with a warning; that can only happen
    on pathological inputs where visitors report more compound contacts
    than the hosts do.
    """
    table: ExposureTable = {}
    for cluster in sorted(arm_of):
        arm = arm_of[cluster]
        d = sums.sum_d.get(cluster, 0)
        if d <= 0:
            raise AnalysisError(f"no contact data for cluster {cluster!r}")
        t = sums.sum_t.get(cluster, 0)
        if arm == TREATED:
            visitor_term = sums.ledger.from_control.get(cluster, 0)
            m = Fraction(t - visitor_term, d)
        else:
            visitor_term = sums.ledger.from_treated.get(cluster, 0)
            m = Fraction(t + visitor_term, d)
        if m < 0 or m > 1:
            logger.warning("exposure for cluster %s clamped from %s into [0, 1]",
                           cluster, m)
            m = min(max(m, Fraction(0)), Fraction(1))
        table[cluster] = ClusterExposure(cluster, arm, t, d, visitor_term, m)
    return table


def binary_exposure(arm_of: Mapping[str, str]) -> ExposureTable:
    """Exposure table for the no-contamination analysis: 1 for treated
    clusters, 0 for control."""
    return {
        cluster: ClusterExposure(cluster, arm, 0, 0, 0,
                                 Fraction(1 if arm == TREATED else 0))
        for cluster, arm in sorted(arm_of.items())
    }


def exposure_values(table: ExposureTable) -> dict[str, float]:
    return {cluster: float(ce.exposure) for cluster, ce in table.items()}


# ---------------------------------------------------------------------------
# CSV interfaces

CONTACT_COLUMNS = [
    "respondent_id", "residence_cluster", "symptomatic", "day_offset",
    "location_kind", "village", "time_of_day", "count", "visited",
]

EXPOSURE_COLUMNS = ["cluster", "arm", "pct_in_treated", "pct_from_visitors", "exposure"]

_BOOL = {"1": True, "0": False, "true": True, "false": False,
         "yes": True, "no": False}


def _parse_bool(text: str, where: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"{where}: expected a boolean, got {text!r}") from None


def _opt(text: str | None) -> str | None:
    if text is None or not text.strip():
        return None
    return text.strip()


def read_contacts_csv(path) -> list[ContactReport]:
    """One row per entry; rows grouped into per-respondent, per-day
    reports.  Empty cells are missing values."""
    reports: dict[tuple[str, int], ContactReport] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "respondent_id" not in reader.fieldnames:
            raise ConfigError(f"contacts file {path}: missing header")
        for i, row in enumerate(reader, start=2):
            where = f"{path}:{i}"
            kind = (row.get("location_kind") or "").strip()
            if kind not in LOCATION_KINDS:
                raise ConfigError(f"{where}: unknown location_kind {kind!r}")
            try:
                day = int(row.get("day_offset") or "")
            except ValueError:
                raise ConfigError(f"{where}: bad day_offset") from None
            if day not in DAY_OFFSETS:
                raise ConfigError(f"{where}: day_offset must be one of {DAY_OFFSETS}")
            time = _opt(row.get("time_of_day"))
            if time is not None and time not in TIMES_OF_DAY:
                raise ConfigError(f"{where}: unknown time_of_day {time!r}")
            count_text = _opt(row.get("count"))
            count = None
            if count_text is not None:
                try:
                    count = int(count_text)
                except ValueError:
                    raise ConfigError(f"{where}: bad count {count_text!r}") from None
                if count < 0:
                    raise ConfigError(f"{where}: negative count")
            visited_text = _opt(row.get("visited"))
            visited = None if visited_text is None else _parse_bool(visited_text, where)
            key = ((row.get("respondent_id") or "").strip(), day)
            report = reports.get(key)
            if report is None:
                report = ContactReport(
                    respondent_id=key[0],
                    residence_cluster=(row.get("residence_cluster") or "").strip(),
                    symptomatic=_parse_bool(row.get("symptomatic") or "", where),
                    day_offset=day,
                )
                reports[key] = report
            report.entries.append(ContactEntry(
                location_kind=kind,
                village=_opt(row.get("village")),
                time_of_day=time,
                count=count,
                visited=visited,
            ))
    return list(reports.values())


def write_contacts_csv(reports: Iterable[ContactReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONTACT_COLUMNS)
        for r in reports:
            for e in r.entries:
                writer.writerow([
                    r.respondent_id, r.residence_cluster, int(r.symptomatic),
                    r.day_offset, e.location_kind, e.village or "",
                    e.time_of_day or "",
                    "" if e.count is None else e.count,
                    "" if e.visited is None else int(e.visited),
                ])


def write_exposure_csv(table: ExposureTable, path) -> None:
    """Per-cluster exposure table.  The two pct columns are display
    percentages; the exposure column carries the full-precision value
    in [0, 1] consumed by the hazard fit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EXPOSURE_COLUMNS)
        for cluster in sorted(table):
            ce = table[cluster]
            if ce.sum_d > 0:
                pct_t = repr(round(float(Fraction(100 * ce.sum_t, ce.sum_d)), 6))
                pct_v = repr(round(float(Fraction(100 * ce.visitor_term, ce.sum_d)), 6))
            else:
                pct_t = repr(round(100.0 * float(ce.exposure), 6))
                pct_v = repr(0.0)
            writer.writerow([ce.cluster, ce.arm, pct_t, pct_v, repr(float(ce.exposure))])


def read_exposure_csv(path) -> ExposureTable:
    table: ExposureTable = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "exposure" not in reader.fieldnames:
            raise ConfigError(f"exposure file {path}: missing header")
        for i, row in enumerate(reader, start=2):
            cluster = (row.get("cluster") or "").strip()
            arm = (row.get("arm") or "").strip()
            if arm not in (TREATED, CONTROL):
                raise ConfigError(f"{path}:{i}: unknown arm {arm!r}")
            try:
                exposure = Fraction(row.get("exposure") or "")
            except (ValueError, ZeroDivisionError):
                raise ConfigError(f"{path}:{i}: bad exposure value") from None
            table[cluster] = ClusterExposure(cluster, arm, 0, 0, 0, exposure)
    return table


_ARM_ALIASES = {
    "treated": TREATED, "vaccine": TREATED, "trt": TREATED, "1": TREATED,
    "control": CONTROL, "ctr": CONTROL, "0": CONTROL,
}


def read_arms_csv(path) -> dict[str, str]:
    """Cluster-to-arm assignment file with columns cluster, arm."""
    arm_of: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "cluster" not in reader.fieldnames:
            raise ConfigError(f"arms file {path}: missing header")
        for i, row in enumerate(reader, start=2):
            cluster = (row.get("cluster") or "").strip()
            raw = (row.get("arm") or "").strip().lower()
            if raw not in _ARM_ALIASES:
                raise ConfigError(f"{path}:{i}: unknown arm {raw!r}")
            arm_of[cluster] = _ARM_ALIASES[raw]
    if not arm_of:
        raise ConfigError(f"arms file {path}: no clusters")
    return arm_of
