"""OMOP-lite patient data model: concept codes, events, labeling and eye features.

A cohort is a list of PatientRecord. Glaucoma status is derived from coded
events (two distinct encounter dates carrying a confirmed glaucoma code);
eye-exam features (max IOP, max CDR, any treatment) are extracted for
evaluation only and are structurally excluded from model inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from enum import Enum

from .errors import FormatError, InputError


class Domain(str, Enum):
    DIAGNOSIS = "Diagnosis"
    MEDICATION = "Medication"
    LAB = "Lab"
    VITAL = "Vital"
    GLAUCOMA_DX = "GlaucomaDx"
    GLAUCOMA_SUSPECT_DX = "GlaucomaSuspectDx"
    GLAUCOMA_TREATMENT = "GlaucomaTreatment"


SEX_VALUES = ("Male", "Female")
RACE_ETHNICITY_VALUES = ("NH-White", "NH-Black", "NH-Asian", "Hispanic", "Other")

# reserved measurement concepts for the evaluation-only eye channels
IOP_CONCEPT_ID = 9001
CDR_CONCEPT_ID = 9002

STUDY_WINDOW = (date(2014, 1, 1), date(2023, 12, 31))


@dataclass(frozen=True)
class ConceptCode:
    id: int
    domain: Domain


@dataclass(frozen=True)
class CodedEvent:
    concept: ConceptCode
    date: date


@dataclass(frozen=True)
class MeasurementEvent:
    concept: ConceptCode
    date: date
    value: float


@dataclass
class PatientRecord:
    patient_id: int
    age: float
    sex: str
    race_ethnicity: str
    events: list = field(default_factory=list)
    measurements: list = field(default_factory=list)


@dataclass(frozen=True)
class CohortLabel:
    is_glaucoma: bool
    first_dx_date: date | None = None

    def __post_init__(self):
        if self.is_glaucoma != (self.first_dx_date is not None):
            raise InputError("first_dx_date must be present exactly for positive labels")


@dataclass(frozen=True)
class EyeEvalFeatures:
    max_iop: float | None
    max_cdr: float | None
    any_treatment: bool

    FIELD_NAMES = ("max_iop", "max_cdr", "any_treatment")


def label_glaucoma(record: PatientRecord, suspect_set: set) -> CohortLabel:
    """Positive iff >= 2 distinct encounter dates carry a confirmed glaucoma code.

    An "encounter" is a distinct calendar date. Codes in ``suspect_set`` never
    count, independent of their domain tag. Earliest qualifying date becomes
    first_dx_date.
    """
    dates = {
        ev.date
        for ev in record.events
        if ev.concept.domain == Domain.GLAUCOMA_DX and ev.concept.id not in suspect_set
    }
    if len(dates) >= 2:
        return CohortLabel(is_glaucoma=True, first_dx_date=min(dates))
    return CohortLabel(is_glaucoma=False)


def apply_temporal_cutoff(record: PatientRecord, label: CohortLabel) -> PatientRecord:
    """Drop events/measurements dated on or after the first glaucoma diagnosis.

    Negative patients are returned unchanged. Events dated exactly on
    first_dx_date are removed (strictly-before convention: same-day coding
    could leak the diagnosis).
    """
    if not label.is_glaucoma:
        return record
    cutoff = label.first_dx_date
    return replace(
        record,
        events=[ev for ev in record.events if ev.date < cutoff],
        measurements=[m for m in record.measurements if m.date < cutoff],
    )


def extract_eval_features(record: PatientRecord,
                          iop_id: int = IOP_CONCEPT_ID,
                          cdr_id: int = CDR_CONCEPT_ID) -> EyeEvalFeatures:
    """Evaluation-only eye features from the full (uncut) record."""
    iops = [m.value for m in record.measurements if m.concept.id == iop_id]
    cdrs = [m.value for m in record.measurements if m.concept.id == cdr_id]
    treated = any(ev.concept.domain == Domain.GLAUCOMA_TREATMENT for ev in record.events)
    return EyeEvalFeatures(
        max_iop=max(iops) if iops else None,
        max_cdr=max(cdrs) if cdrs else None,
        any_treatment=treated,
    )


@dataclass
class ConceptDictionary:
    """Domain membership for every concept id used in a cohort."""

    domains: dict  # Domain -> sorted list of ids

    def __post_init__(self):
        dx = set(self.domains.get(Domain.GLAUCOMA_DX, ()))
        suspect = set(self.domains.get(Domain.GLAUCOMA_SUSPECT_DX, ()))
        if dx & suspect:
            raise InputError("glaucoma and glaucoma-suspect concept sets must be disjoint")

    @property
    def suspect_set(self) -> set:
        return set(self.domains.get(Domain.GLAUCOMA_SUSPECT_DX, ()))

    def ids(self, domain: Domain) -> list:
        return sorted(self.domains.get(domain, ()))

    def save(self, path):
        payload = {d.value: sorted(ids) for d, ids in self.domains.items()}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ConceptDictionary":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        try:
            domains = {Domain(name): sorted(ids) for name, ids in payload.items()}
        except ValueError as exc:
            raise FormatError(f"unknown domain in concept dictionary: {exc}") from exc
        return cls(domains=domains)


def validate_record(record: PatientRecord) -> None:
    """Check unit-level invariants; raises InputError on violation."""
    if record.age < 18:
        raise InputError(f"patient {record.patient_id}: age must be >= 18")
    if record.sex not in SEX_VALUES:
        raise InputError(f"patient {record.patient_id}: unknown sex {record.sex!r}")
    if record.race_ethnicity not in RACE_ETHNICITY_VALUES:
        raise InputError(
            f"patient {record.patient_id}: unknown race/ethnicity {record.race_ethnicity!r}")
    for m in record.measurements:
        if m.concept.id == IOP_CONCEPT_ID and not (0.0 < m.value <= 80.0):
            raise InputError(f"patient {record.patient_id}: IOP {m.value} outside (0, 80]")
        if m.concept.id == CDR_CONCEPT_ID and not (0.0 <= m.value <= 1.0):
            raise InputError(f"patient {record.patient_id}: CDR {m.value} outside [0, 1]")


def _record_to_json(record: PatientRecord) -> dict:
    return {
        "patient_id": record.patient_id,
        "age": record.age,
        "sex": record.sex,
        "race_ethnicity": record.race_ethnicity,
        "events": [
            {"concept_id": ev.concept.id, "domain": ev.concept.domain.value,
             "date": ev.date.isoformat()}
            for ev in record.events
        ],
        "measurements": [
            {"concept_id": m.concept.id, "domain": m.concept.domain.value,
             "date": m.date.isoformat(), "value": m.value}
            for m in record.measurements
        ],
    }


def _record_from_json(obj: dict) -> PatientRecord:
    try:
        events = [
            CodedEvent(ConceptCode(int(e["concept_id"]), Domain(e["domain"])),
                       date.fromisoformat(e["date"]))
            for e in obj["events"]
        ]
        measurements = [
            MeasurementEvent(ConceptCode(int(m["concept_id"]), Domain(m["domain"])),
                             date.fromisoformat(m["date"]), float(m["value"]))
            for m in obj["measurements"]
        ]
        return PatientRecord(
            patient_id=int(obj["patient_id"]),
            age=float(obj["age"]),
            sex=str(obj["sex"]),
            race_ethnicity=str(obj["race_ethnicity"]),
            events=events,
            measurements=measurements,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed patient line: {exc}") from exc


def write_cohort(records, path) -> None:
    """One patient per JSONL line, dates ISO-8601."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(_record_to_json(record), sort_keys=True))
            fh.write("\n")


def load_cohort(path, validate: bool = True) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{line_no}: invalid JSON") from exc
            record = _record_from_json(obj)
            if validate:
                validate_record(record)
            records.append(record)
    seen = set()
    for r in records:
        if r.patient_id in seen:
            raise FormatError(f"duplicate patient_id {r.patient_id}")
        seen.add(r.patient_id)
    return records


def day_offset(day: date) -> int:
    return (day - STUDY_WINDOW[0]).days


def day_from_offset(offset: int) -> date:
    return STUDY_WINDOW[0] + timedelta(days=int(offset))
