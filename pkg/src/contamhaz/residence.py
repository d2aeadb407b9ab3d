"""Residence-record cleaning and time-to-event derivation.

Residence histories arrive as up to two recorded stays (village,
arrival, departure) plus an overall home-village variable.  A small
subset of records encodes three stays by letting the home-village
variable denote the residence *before* the first recorded stay; those
are first normalised into the common two-stay scheme.  The date-repair
rules are then applied in a fixed order, and whatever still violates
``arrival1 <= departure1 <= arrival2 <= departure2`` is excluded rather
than silently kept.

Rule identifiers used in exclusion output:

0. unparseable dates (reported by the CSV reader, not the cleaner)
1. both stay-2 dates precede the stay-1 dates: stays swapped
2. stay-2 arrival precedes both stay-1 dates and stay-2 departure is
   missing: stays swapped, then the (missing) stay-1 departure is
   imputed as the stay-2 arrival
3. missing stay-1 departure imputed as the stay-2 arrival
4. stay-2 arrival earlier than stay-1 departure: departure recoded to
   the stay-2 arrival
5. stay-1 departure earlier than stay-1 arrival while a stay-2 arrival
   exists: departure recoded to the stay-2 arrival
6. dates still out of order after all repairs: record excluded
7. three-stay encoding shifted into the two-stay scheme (applied before
   rules 1-6 whenever the home village differs from the stay-1 village)
"""

from __future__ import annotations

import csv
import datetime as dt
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .dates import format_date, parse_optional_date
from .errors import ConfigError

RULE_PARSE_ERROR = 0
RULE_EXCLUDE_UNORDERED = 6


@dataclass(frozen=True)
class ResidenceRecord:
    participant_id: str
    village: str
    birth_or_entry_date: dt.date | None = None
    stay1_village: str | None = None
    stay1_arrival: dt.date | None = None
    stay1_departure: dt.date | None = None
    stay2_village: str | None = None
    stay2_arrival: dt.date | None = None
    stay2_departure: dt.date | None = None


@dataclass(frozen=True)
class FollowUpWindow:
    study_start: dt.date
    study_end: dt.date
    admin_censor_date: dt.date | None = None

    def __post_init__(self):
        if self.study_start >= self.study_end:
            raise ConfigError("follow-up window start must precede its end")
        if self.admin_censor_date is not None and not (
            self.study_start < self.admin_censor_date <= self.study_end
        ):
            raise ConfigError("administrative censor date must fall inside the window")


class ExclusionReason(str, Enum):
    RESIDENCE_PARSE_ERROR = "residence_parse_error"
    RESIDENCE_INCONSISTENT = "residence_inconsistent"
    NOT_IN_TRIAL_AREA = "not_in_trial_area"
    MOVED_IN_AFTER_STUDY_END = "moved_in_after_study_end"
    PRE_ENROLLMENT_INFECTION = "pre_enrollment_infection"
    PRE_FOLLOWUP_INFECTION = "pre_followup_infection"
    NO_FOLLOWUP_TIME = "no_followup_time"


@dataclass(frozen=True)
class SurvivalObservation:
    """One participant's follow-up: time in days, event flag, cluster.

    Excluded participants carry ``excluded_reason`` and no time/event.
    For retained observations ``time`` is strictly positive and
    ``event`` is True only when the infection fell inside the
    individual's follow-up interval.
    """

    participant_id: str
    cluster: str
    time: float | None
    event: bool | None
    excluded_reason: str | None = None

    @property
    def included(self) -> bool:
        return self.excluded_reason is None


@dataclass
class CleaningResult:
    cleaned: list[ResidenceRecord]
    exclusions: list[tuple[str, int]]
    rule_counts: Counter


def _ordered(rec: ResidenceRecord) -> bool:
    chain = [d for d in (rec.stay1_arrival, rec.stay1_departure,
                         rec.stay2_arrival, rec.stay2_departure) if d is not None]
    return all(a <= b for a, b in zip(chain, chain[1:]))


def _shift_three_stay_encoding(rec: ResidenceRecord) -> ResidenceRecord:
    # The home village describes the residence before the first recorded
    # stay; push everything down one slot and drop the third stay.
    return replace(
        rec,
        stay1_village=rec.village,
        stay1_arrival=rec.birth_or_entry_date,
        stay1_departure=rec.stay1_arrival,
        stay2_village=rec.stay1_village,
        stay2_arrival=rec.stay1_arrival,
        stay2_departure=rec.stay1_departure,
    )


def _swap_stays(rec: ResidenceRecord) -> ResidenceRecord:
    return replace(
        rec,
        village=rec.stay2_village if rec.stay2_village is not None else rec.village,
        stay1_village=rec.stay2_village,
        stay1_arrival=rec.stay2_arrival,
        stay1_departure=rec.stay2_departure,
        stay2_village=rec.stay1_village,
        stay2_arrival=rec.stay1_arrival,
        stay2_departure=rec.stay1_departure,
    )


def _clean_one(rec: ResidenceRecord) -> tuple[ResidenceRecord | None, list[int]]:
    applied: list[int] = []

    if rec.stay1_village is not None and rec.village != rec.stay1_village:
        rec = _shift_three_stay_encoding(rec)
        applied.append(7)

    a1, d1 = rec.stay1_arrival, rec.stay1_departure
    a2, d2 = rec.stay2_arrival, rec.stay2_departure

    if (None not in (a1, d1, a2, d2)) and a2 < a1 and d2 < d1:
        rec = _swap_stays(rec)
        applied.append(1)
    elif (None not in (a1, d1, a2)) and d2 is None and a2 < a1 and a2 < d1:
        rec = _swap_stays(rec)
        # after the swap the first stay's departure is the missing one
        rec = replace(rec, stay1_departure=rec.stay2_arrival)
        applied.append(2)

    if rec.stay1_departure is None and rec.stay2_arrival is not None:
        rec = replace(rec, stay1_departure=rec.stay2_arrival)
        applied.append(3)

    if (rec.stay2_arrival is not None and rec.stay1_departure is not None
            and rec.stay2_arrival < rec.stay1_departure):
        rec = replace(rec, stay1_departure=rec.stay2_arrival)
        applied.append(4)

    if (rec.stay1_departure is not None and rec.stay1_arrival is not None
            and rec.stay1_departure < rec.stay1_arrival
            and rec.stay2_arrival is not None):
        rec = replace(rec, stay1_departure=rec.stay2_arrival)
        applied.append(5)

    if not _ordered(rec):
        applied.append(RULE_EXCLUDE_UNORDERED)
        return None, applied
    return rec, applied


def clean_residence(records: Sequence[ResidenceRecord]) -> CleaningResult:
    """Apply the repair rules in order and split records into cleaned
    and excluded.  Every input record lands in exactly one of the two
    outputs; cleaning the cleaned output again is a no-op.
    """
    cleaned: list[ResidenceRecord] = []
    exclusions: list[tuple[str, int]] = []
    counts: Counter = Counter()
    for rec in records:
        fixed, applied = _clean_one(rec)
        counts.update(applied)
        if fixed is None:
            exclusions.append((rec.participant_id, RULE_EXCLUDE_UNORDERED))
        else:
            cleaned.append(fixed)
    return CleaningResult(cleaned, exclusions, counts)


@dataclass(frozen=True)
class _Spell:
    village: str | None
    arrival: dt.date | None
    departure: dt.date | None


def _spells(rec: ResidenceRecord) -> list[_Spell]:
    has_stay2 = any(v is not None for v in
                    (rec.stay2_village, rec.stay2_arrival, rec.stay2_departure))
    if rec.stay1_village is None and not has_stay2:
        return [_Spell(rec.village, rec.birth_or_entry_date, None)]
    spells = [_Spell(rec.stay1_village if rec.stay1_village is not None else rec.village,
                     rec.stay1_arrival, rec.stay1_departure)]
    if has_stay2:
        spells.append(_Spell(rec.stay2_village, rec.stay2_arrival, rec.stay2_departure))
    return spells


def derive_time_to_event(
    record: ResidenceRecord,
    infection_date: dt.date | None,
    window: FollowUpWindow,
    arm_of: Mapping[str, str],
) -> SurvivalObservation:
    """Turn a cleaned residence history into one survival observation.

    Follow-up starts at the study start or the later arrival into a
    trial village; it ends at the earliest of the study end, the
    administrative censor date, a move out of the trial area (moves to
    villages without surveillance count as leaving), or a move to a
    cluster of the opposite arm.  An infection strictly inside
    ``(start, end]`` is an event timed from the follow-up start; an
    infection on the day of an out-move still counts as an event.
    Participants infected on or before their follow-up start, or never
    resident in a trial village during the window, are excluded.
    """
    pid = record.participant_id
    spells = _spells(record)

    idx = None
    for i, sp in enumerate(spells):
        if sp.village is None or sp.village not in arm_of:
            continue
        if sp.departure is not None and sp.departure <= window.study_start:
            continue
        idx = i
        break
    if idx is None:
        return SurvivalObservation(pid, record.village, None, None,
                                   ExclusionReason.NOT_IN_TRIAL_AREA.value)

    entry_spell = spells[idx]
    if entry_spell.arrival is not None and entry_spell.arrival > window.study_end:
        return SurvivalObservation(pid, entry_spell.village, None, None,
                                   ExclusionReason.MOVED_IN_AFTER_STUDY_END.value)

    start = window.study_start
    if entry_spell.arrival is not None and entry_spell.arrival > start:
        start = entry_spell.arrival
    cluster = entry_spell.village
    arm = arm_of[cluster]

    # Walk forward through moves; only a departure before the study end
    # can shorten follow-up, and moves between trial villages of the
    # same arm do not censor.
    end = window.study_end
    cur = idx
    while True:
        dep = spells[cur].departure
        if dep is None or dep >= end:
            break
        nxt = spells[cur + 1] if cur + 1 < len(spells) else None
        if nxt is not None and nxt.village is not None and nxt.village in arm_of:
            if arm_of[nxt.village] == arm:
                cur += 1
                continue
        # opposite arm, unknown destination, or a village without
        # surveillance: follow-up ends on the move date
        end = dep
        break
    if window.admin_censor_date is not None and window.admin_censor_date < end:
        end = window.admin_censor_date

    if end <= start:
        return SurvivalObservation(pid, cluster, None, None,
                                   ExclusionReason.NO_FOLLOWUP_TIME.value)

    if infection_date is not None and infection_date <= start:
        reason = (ExclusionReason.PRE_ENROLLMENT_INFECTION
                  if infection_date < window.study_start
                  else ExclusionReason.PRE_FOLLOWUP_INFECTION)
        return SurvivalObservation(pid, cluster, None, None, reason.value)

    if infection_date is not None and infection_date <= end:
        time = float((infection_date - start).days)
        return SurvivalObservation(pid, cluster, time, True)
    return SurvivalObservation(pid, cluster, float((end - start).days), False)


def derive_cohort(
    records: Iterable[ResidenceRecord],
    infections: Mapping[str, dt.date],
    window: FollowUpWindow,
    arm_of: Mapping[str, str],
) -> list[SurvivalObservation]:
    return [
        derive_time_to_event(rec, infections.get(rec.participant_id), window, arm_of)
        for rec in records
    ]


@dataclass(frozen=True)
class ArmSummary:
    n: int
    events: int

    @property
    def incidence(self) -> float:
        return self.events / self.n


def summarize_cohort(
    observations: Sequence[SurvivalObservation],
    arm_of: Mapping[str, str],
) -> dict[str, ArmSummary]:
    """Per-arm participant and event counts.  Arms with no retained
    observations are simply absent from the result."""
    if not observations:
        raise ConfigError("no observations to summarize")
    n: Counter = Counter()
    events: Counter = Counter()
    for obs in observations:
        if not obs.included:
            continue
        arm = arm_of[obs.cluster]
        n[arm] += 1
        if obs.event:
            events[arm] += 1
    return {arm: ArmSummary(n[arm], events[arm]) for arm in sorted(n)}


def format_cohort_summary(summaries: Mapping[str, ArmSummary]) -> str:
    lines = []
    for arm, s in summaries.items():
        lines.append(f"{arm}: {s.events}/{s.n} ({100.0 * s.incidence:.2f}%)")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# CSV interfaces

RESIDENCE_COLUMNS = [
    "participant_id", "village", "birth_or_entry_date",
    "stay1_village", "stay1_arrival", "stay1_departure",
    "stay2_village", "stay2_arrival", "stay2_departure",
]

OBSERVATION_COLUMNS = ["participant_id", "cluster", "time_days", "event", "excluded_reason"]


def _opt(text: str | None) -> str | None:
    if text is None or not text.strip():
        return None
    return text.strip()


def read_residence_csv(path) -> tuple[list[ResidenceRecord], list[tuple[str, int]]]:
    """Parse the residence file; rows with malformed dates become
    exclusions with rule id 0 instead of aborting the run."""
    records: list[ResidenceRecord] = []
    failures: list[tuple[str, int]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "participant_id" not in reader.fieldnames:
            raise ConfigError(f"residence file {path}: missing header")
        for row in reader:
            pid = (row.get("participant_id") or "").strip()
            try:
                records.append(ResidenceRecord(
                    participant_id=pid,
                    village=(row.get("village") or "").strip(),
                    birth_or_entry_date=parse_optional_date(row.get("birth_or_entry_date")),
                    stay1_village=_opt(row.get("stay1_village")),
                    stay1_arrival=parse_optional_date(row.get("stay1_arrival")),
                    stay1_departure=parse_optional_date(row.get("stay1_departure")),
                    stay2_village=_opt(row.get("stay2_village")),
                    stay2_arrival=parse_optional_date(row.get("stay2_arrival")),
                    stay2_departure=parse_optional_date(row.get("stay2_departure")),
                ))
            except ValueError:
                failures.append((pid, RULE_PARSE_ERROR))
    return records, failures


def read_infections_csv(path) -> dict[str, dt.date]:
    """Map participant to first positive sample date."""
    infections: dict[str, dt.date] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "sample_date" not in reader.fieldnames:
            raise ConfigError(f"infections file {path}: missing header")
        for row in reader:
            pid = (row.get("participant_id") or "").strip()
            date = parse_optional_date(row.get("sample_date"))
            if date is None:
                continue
            if pid not in infections or date < infections[pid]:
                infections[pid] = date
    return infections


def write_observations_csv(observations: Iterable[SurvivalObservation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATION_COLUMNS)
        for obs in observations:
            writer.writerow([
                obs.participant_id,
                obs.cluster,
                "" if obs.time is None else repr(obs.time),
                "" if obs.event is None else int(obs.event),
                obs.excluded_reason or "",
            ])


def read_observations_csv(path) -> list[SurvivalObservation]:
    out: list[SurvivalObservation] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "time_days" not in reader.fieldnames:
            raise ConfigError(f"observations file {path}: missing header")
        for row in reader:
            time = _opt(row.get("time_days"))
            event = _opt(row.get("event"))
            out.append(SurvivalObservation(
                participant_id=(row.get("participant_id") or "").strip(),
                cluster=(row.get("cluster") or "").strip(),
                time=None if time is None else float(time),
                event=None if event is None else bool(int(event)),
                excluded_reason=_opt(row.get("excluded_reason")),
            ))
    return out


def write_residence_csv(records: Iterable[ResidenceRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESIDENCE_COLUMNS)
        for r in records:
            writer.writerow([
                r.participant_id, r.village, format_date(r.birth_or_entry_date),
                r.stay1_village or "", format_date(r.stay1_arrival), format_date(r.stay1_departure),
                r.stay2_village or "", format_date(r.stay2_arrival), format_date(r.stay2_departure),
            ])
