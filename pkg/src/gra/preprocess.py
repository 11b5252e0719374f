"""Cohort -> model-ready matrices.

Column layout of a FeatureMatrix is fixed as four blocks:

    [diagnosis indicators | medication indicators | demographics | continuous]

Diagnosis/medication columns are 0/1 presence flags, demographics are age
plus one-hot sex and race/ethnicity, continuous columns carry the latest
recorded value (NaN when absent, tracked by missing_mask). Evaluation-only
eye features never enter the schema; they sit on the exclusion list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cohort import (
    CDR_CONCEPT_ID,
    IOP_CONCEPT_ID,
    ConceptDictionary,
    Domain,
    EyeEvalFeatures,
    RACE_ETHNICITY_VALUES,
    SEX_VALUES,
)
from .errors import ConfigError, DegenerateColumnError, FormatError, SchemaError

DEMOGRAPHIC_COLUMNS = ("age",) + tuple(f"sex_{s}" for s in SEX_VALUES) + \
    tuple(f"race_{r}" for r in RACE_ETHNICITY_VALUES)

DEFAULT_EXCLUSIONS = EyeEvalFeatures.FIELD_NAMES + (f"vital_{IOP_CONCEPT_ID}",
                                                    f"vital_{CDR_CONCEPT_ID}")


@dataclass
class FeatureSchema:
    dx_columns: list            # ordered diagnosis concept ids
    med_columns: list           # ordered medication concept ids
    continuous_columns: list    # ordered (concept_id, name) pairs
    demographic_columns: list = field(default_factory=lambda: list(DEMOGRAPHIC_COLUMNS))
    exclusion_list: list = field(default_factory=lambda: list(DEFAULT_EXCLUSIONS))

    def __post_init__(self):
        names = self.column_names()
        if len(set(names)) != len(names):
            raise SchemaError("schema columns must be disjoint")
        overlap = set(names) & set(self.exclusion_list)
        if overlap:
            raise SchemaError(f"evaluation-only features in schema: {sorted(overlap)}")

    # block boundaries -------------------------------------------------
    @property
    def n_dx(self):
        return len(self.dx_columns)

    @property
    def n_med(self):
        return len(self.med_columns)

    @property
    def n_demo(self):
        return len(self.demographic_columns)

    @property
    def n_continuous(self):
        return len(self.continuous_columns)

    @property
    def n_columns(self):
        return self.n_dx + self.n_med + self.n_demo + self.n_continuous

    @property
    def dx_slice(self):
        return slice(0, self.n_dx)

    @property
    def med_slice(self):
        return slice(self.n_dx, self.n_dx + self.n_med)

    @property
    def demo_slice(self):
        start = self.n_dx + self.n_med
        return slice(start, start + self.n_demo)

    @property
    def continuous_slice(self):
        start = self.n_dx + self.n_med + self.n_demo
        return slice(start, start + self.n_continuous)

    def column_names(self) -> list:
        return ([f"dx_{c}" for c in self.dx_columns]
                + [f"med_{c}" for c in self.med_columns]
                + list(self.demographic_columns)
                + [name for _, name in self.continuous_columns])

    def boolean_column_indices(self) -> list:
        """dx/med indicators plus the one-hot demographic columns."""
        idx = list(range(self.n_dx + self.n_med))
        demo_start = self.demo_slice.start
        for j, name in enumerate(self.demographic_columns):
            if name != "age":
                idx.append(demo_start + j)
        return idx

    def scaled_column_indices(self) -> list:
        """Columns subject to standardization: age plus every continuous column."""
        idx = [self.demo_slice.start + self.demographic_columns.index("age")]
        idx.extend(range(self.continuous_slice.start, self.continuous_slice.stop))
        return idx

    def to_dict(self) -> dict:
        return {
            "dx_columns": list(self.dx_columns),
            "med_columns": list(self.med_columns),
            "continuous_columns": [[c, n] for c, n in self.continuous_columns],
            "demographic_columns": list(self.demographic_columns),
            "exclusion_list": list(self.exclusion_list),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            dx_columns=[int(c) for c in d["dx_columns"]],
            med_columns=[int(c) for c in d["med_columns"]],
            continuous_columns=[(int(c), str(n)) for c, n in d["continuous_columns"]],
            demographic_columns=list(d["demographic_columns"]),
            exclusion_list=list(d["exclusion_list"]),
        )


def build_schema(concepts: ConceptDictionary) -> FeatureSchema:
    """Schema from a concept dictionary: labs become continuous columns, the
    glaucoma/suspect/treatment domains and eye vitals are never model inputs."""
    return FeatureSchema(
        dx_columns=concepts.ids(Domain.DIAGNOSIS),
        med_columns=concepts.ids(Domain.MEDICATION),
        continuous_columns=[(c, f"lab_{c}") for c in concepts.ids(Domain.LAB)],
    )


@dataclass
class FeatureMatrix:
    data: np.ndarray            # (n, p) float64
    schema: FeatureSchema
    patient_ids: list
    missing_mask: np.ndarray    # (n, p) bool, True = missing pre-imputation

    def __post_init__(self):
        if self.data.shape[0] != len(self.patient_ids):
            raise SchemaError("row count must equal patient id count")
        if self.data.shape != self.missing_mask.shape:
            raise SchemaError("missing_mask shape must match data")
        if self.data.shape[1] != self.schema.n_columns:
            raise SchemaError("column count must match schema")

    @property
    def n_rows(self):
        return self.data.shape[0]

    def row_index(self, ids) -> np.ndarray:
        lookup = {pid: i for i, pid in enumerate(self.patient_ids)}
        try:
            return np.array([lookup[p] for p in ids], dtype=int)
        except KeyError as exc:
            raise SchemaError(f"unknown patient id {exc}") from exc

    def subset(self, ids) -> "FeatureMatrix":
        idx = self.row_index(ids)
        return FeatureMatrix(
            data=self.data[idx].copy(),
            schema=self.schema,
            patient_ids=[self.patient_ids[i] for i in idx],
            missing_mask=self.missing_mask[idx].copy(),
        )

    def validate_booleans(self) -> None:
        idx = self.schema.boolean_column_indices()
        block = self.data[:, idx]
        if not np.all(np.isin(block, (0.0, 1.0))):
            raise SchemaError("boolean columns must contain only 0/1")


def encode(records, schema: FeatureSchema, on_unknown: str = "error") -> FeatureMatrix:
    """Encode patient records against a schema.

    Diagnosis/medication events become presence flags; each continuous column
    carries the latest recorded value (ties on date broken by input order,
    later wins). Concepts on the exclusion list (and the glaucoma label /
    treatment domains) are always skipped. Other concepts missing from the
    schema raise a SchemaError by default, or are silently dropped with
    ``on_unknown="drop"`` (the cross-site mapping path).
    """
    if on_unknown not in ("error", "drop"):
        raise ConfigError("on_unknown must be 'error' or 'drop'")
    dx_pos = {c: j for j, c in enumerate(schema.dx_columns)}
    med_pos = {c: j + schema.n_dx for j, c in enumerate(schema.med_columns)}
    cont_pos = {c: j + schema.continuous_slice.start
                for j, (c, _) in enumerate(schema.continuous_columns)}
    excluded_ids = {IOP_CONCEPT_ID, CDR_CONCEPT_ID}

    n, p = len(records), schema.n_columns
    data = np.zeros((n, p), dtype=np.float64)
    mask = np.zeros((n, p), dtype=bool)
    mask[:, schema.continuous_slice] = True
    latest = {}  # (row, col) -> (date, order)

    demo_start = schema.demo_slice.start
    sex_index = {s: demo_start + 1 + i for i, s in enumerate(SEX_VALUES)}
    race_index = {r: demo_start + 1 + len(SEX_VALUES) + i
                  for i, r in enumerate(RACE_ETHNICITY_VALUES)}

    for i, record in enumerate(records):
        data[i, demo_start] = record.age
        if record.sex not in sex_index:
            raise SchemaError(f"patient {record.patient_id}: unknown sex {record.sex!r}")
        if record.race_ethnicity not in race_index:
            raise SchemaError(
                f"patient {record.patient_id}: unknown race {record.race_ethnicity!r}")
        data[i, sex_index[record.sex]] = 1.0
        data[i, race_index[record.race_ethnicity]] = 1.0

        for ev in record.events:
            cid, dom = ev.concept.id, ev.concept.domain
            if dom == Domain.DIAGNOSIS:
                col = dx_pos.get(cid)
            elif dom == Domain.MEDICATION:
                col = med_pos.get(cid)
            else:
                continue  # label/treatment/suspect domains are never inputs
            if col is None:
                if on_unknown == "error":
                    raise SchemaError(
                        f"concept {cid} ({dom.value}) present in cohort but absent from schema")
                continue
            data[i, col] = 1.0

        for order, m in enumerate(record.measurements):
            cid = m.concept.id
            if cid in excluded_ids or m.concept.domain == Domain.VITAL:
                continue
            col = cont_pos.get(cid)
            if col is None:
                if on_unknown == "error":
                    raise SchemaError(
                        f"concept {cid} ({m.concept.domain.value}) present in cohort "
                        f"but absent from schema")
                continue
            key = (i, col)
            stamp = (m.date, order)
            if key not in latest or stamp > latest[key]:
                latest[key] = stamp
                data[i, col] = m.value
                mask[i, col] = False

    data[mask] = np.nan
    return FeatureMatrix(data=data, schema=schema, patient_ids=[r.patient_id for r in records],
                         missing_mask=mask)


def schema_coverage(records, schema: FeatureSchema) -> float:
    """Fraction of diagnosis/medication event concepts the schema can represent."""
    known = set(schema.dx_columns) | set(schema.med_columns)
    total = hits = 0
    for record in records:
        for ev in record.events:
            if ev.concept.domain in (Domain.DIAGNOSIS, Domain.MEDICATION):
                total += 1
                hits += ev.concept.id in known
    return hits / total if total else 1.0


@dataclass
class ScalerParams:
    """Per-column mean and population (divide-by-n) standard deviation,
    fitted on training rows only."""

    columns: list               # column names, stable order
    means: list
    sds: list

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "means": list(self.means),
                "sds": list(self.sds)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(columns=list(d["columns"]), means=[float(x) for x in d["means"]],
                   sds=[float(x) for x in d["sds"]])


def fit_standardizer(matrix: FeatureMatrix, train_ids) -> ScalerParams:
    """Fit z-score parameters on the observed training cells of each scaled column."""
    rows = matrix.row_index(train_ids)
    if rows.size == 0:
        raise ConfigError("train set must be nonempty")
    names = matrix.schema.column_names()
    cols, means, sds = [], [], []
    for j in matrix.schema.scaled_column_indices():
        vals = matrix.data[rows, j]
        vals = vals[~matrix.missing_mask[rows, j]]
        vals = vals[np.isfinite(vals)]
        if np.unique(vals).size < 2:
            raise DegenerateColumnError(
                f"column {names[j]!r} has fewer than 2 distinct observed train values")
        mean = float(np.mean(vals))
        sd = float(np.std(vals))  # population convention
        if sd <= 0.0:
            raise DegenerateColumnError(f"column {names[j]!r} has zero variance")
        cols.append(names[j])
        means.append(mean)
        sds.append(sd)
    return ScalerParams(columns=cols, means=means, sds=sds)


def apply_standardizer(matrix: FeatureMatrix, params: ScalerParams) -> FeatureMatrix:
    """Z-score the scaled columns of every row; boolean/one-hot columns untouched."""
    names = matrix.schema.column_names()
    index = {n: j for j, n in enumerate(names)}
    data = matrix.data.copy()
    for name, mean, sd in zip(params.columns, params.means, params.sds):
        if name not in index:
            raise SchemaError(f"scaler column {name!r} not in schema")
        j = index[name]
        data[:, j] = (data[:, j] - mean) / sd
    return FeatureMatrix(data=data, schema=matrix.schema,
                         patient_ids=list(matrix.patient_ids),
                         missing_mask=matrix.missing_mask.copy())


@dataclass
class SplitIndices:
    train: list
    validation: list
    test: list
    seed: int

    def as_dict(self):
        return {"train": list(self.train), "validation": list(self.validation),
                "test": list(self.test), "seed": self.seed}


def split(patient_ids, labels, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> SplitIndices:
    """Label-stratified shuffle split with exact global floor sizes.

    Global sizes are floor(r0*n) / floor(r1*n) / remainder. Within that
    constraint positives and negatives are allocated by largest fractional
    remainder, so each split keeps the cohort prevalence as closely as
    integer counts allow.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ConfigError("split ratios must be nonnegative")
    ids = list(patient_ids)
    y = list(labels)
    n = len(ids)
    if n < 10:
        raise ConfigError("split needs at least 10 patients")
    if len(y) != n:
        raise ConfigError("labels must align with patient ids")

    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))

    classes = sorted(set(y), reverse=True)  # positives first for tie-breaking
    members = {c: [pid for pid, lab in zip(ids, y) if lab == c] for c in classes}

    def allocate(target, quota_of):
        """Per-class counts summing to target via largest fractional remainder."""
        base = {c: int(np.floor(quota_of(c))) for c in classes}
        short = target - sum(base.values())
        order = sorted(classes, key=lambda c: (-(quota_of(c) - np.floor(quota_of(c))),
                                               -len(members[c]), c))
        for c in order:
            if short == 0:
                break
            if base[c] < len(members[c]):
                base[c] += 1
                short -= 1
        return base

    train_alloc = allocate(n_train, lambda c: ratios[0] * len(members[c]))
    val_alloc = allocate(n_val, lambda c: ratios[1] * len(members[c]))

    train, val, test = [], [], []
    for ci, c in enumerate(classes):
        pool = list(members[c])
        rng = np.random.default_rng([int(seed), 7, ci])
        rng.shuffle(pool)
        t, v = train_alloc[c], val_alloc[c]
        if t + v > len(pool):
            raise ConfigError("class too small for requested ratios")
        train.extend(pool[:t])
        val.extend(pool[t:t + v])
        test.extend(pool[t + v:])
    return SplitIndices(train=train, validation=val, test=test, seed=int(seed))


def save_matrix(matrix: FeatureMatrix, basepath) -> None:
    """Persist as JSON schema + little-endian float32 raw matrix + packed mask."""
    base = str(basepath)
    meta = {
        "n_rows": matrix.n_rows,
        "n_columns": matrix.schema.n_columns,
        "patient_ids": list(matrix.patient_ids),
        "schema": matrix.schema.to_dict(),
    }
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    matrix.data.astype("<f4").tofile(base + ".f32")
    np.packbits(matrix.missing_mask.reshape(-1)).tofile(base + ".mask")


def load_matrix(basepath) -> FeatureMatrix:
    base = str(basepath)
    try:
        with open(base + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read matrix metadata {base}.json: {exc}") from exc
    n, p = int(meta["n_rows"]), int(meta["n_columns"])
    data = np.fromfile(base + ".f32", dtype="<f4")
    if data.size != n * p:
        raise FormatError(f"matrix payload has {data.size} cells, expected {n * p}")
    bits = np.fromfile(base + ".mask", dtype=np.uint8)
    mask = np.unpackbits(bits, count=n * p).astype(bool).reshape(n, p)
    return FeatureMatrix(
        data=data.astype(np.float64).reshape(n, p),
        schema=FeatureSchema.from_dict(meta["schema"]),
        patient_ids=[int(x) for x in meta["patient_ids"]],
        missing_mask=mask,
    )
