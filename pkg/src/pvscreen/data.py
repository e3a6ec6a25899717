"""Stratified pre/post count data.

Each row of the input table is one stratum: a drug, a demographic cell
(adult indicator, female indicator and their product) and a time window
(pre- or post-exposure), with the number of persons at risk and the number
of adverse events observed in that window.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

HEADER = ("drug", "age", "sex", "age_sex", "time", "n", "events")

# Position of each entry in the design vector. The exposure indicator is
# always last so that coefficient index -1 is the post-vs-pre log-odds ratio.
DESIGN_COLUMNS = ("intercept", "age_adult", "sex_female", "age_sex", "post_exposure")
EXPOSURE = len(DESIGN_COLUMNS) - 1


class DataError(ValueError):
    """Raised for malformed input files."""


class ValidationError(DataError):
    """Raised when a record or dataset violates a data invariant."""


@dataclass(frozen=True)
class StratumRecord:
    drug_id: int
    age_adult: int
    sex_female: int
    age_sex: int
    post_exposure: int
    n_at_risk: int
    n_events: int

    def __post_init__(self):
        for name in ("age_adult", "sex_female", "age_sex", "post_exposure"):
            if getattr(self, name) not in (0, 1):
                raise ValidationError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        if self.drug_id < 0:
            raise ValidationError(f"negative drug_id {self.drug_id}")
        if self.n_at_risk < 0 or self.n_events < 0:
            raise ValidationError(f"negative count in stratum {self.key}")
        if self.n_events > self.n_at_risk:
            raise ValidationError(
                f"n_events={self.n_events} exceeds n_at_risk={self.n_at_risk} in stratum {self.key}"
            )
        if self.age_sex != self.age_adult * self.sex_female:
            raise ValidationError(f"age_sex != age_adult * sex_female in stratum {self.key}")

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.drug_id, self.age_adult, self.sex_female, self.post_exposure)


def design_vector(record: StratumRecord) -> np.ndarray:
    """Return ``[1, age_adult, sex_female, age_sex, post_exposure]``."""
    return np.array(
        [1.0, record.age_adult, record.sex_female, record.age_sex, record.post_exposure]
    )


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of stratum records for ``n_drugs`` drugs.

    ``drug_names[i]`` is the human-readable label of dense index ``i``.
    The array views (``X``, ``y``, ``m``, ``drug``) are computed lazily and
    must be treated as read-only.
    """

    records: tuple[StratumRecord, ...]
    n_drugs: int
    drug_names: tuple[str, ...] = ()
    covariate_dim: int = 3

    def __post_init__(self):
        if self.n_drugs < 1:
            raise ValidationError("a dataset needs at least one drug")
        object.__setattr__(self, "records", tuple(self.records))
        if not self.drug_names:
            object.__setattr__(self, "drug_names", tuple(f"drug{i}" for i in range(self.n_drugs)))
        if len(self.drug_names) != self.n_drugs:
            raise ValidationError("drug_names length does not match n_drugs")
        seen = set()
        for r in self.records:
            if r.drug_id >= self.n_drugs:
                raise ValidationError(f"drug_id {r.drug_id} out of range for {self.n_drugs} drugs")
            if r.key in seen:
                raise ValidationError(f"duplicate stratum {r.key}")
            seen.add(r.key)
        windows = {(r.drug_id, r.post_exposure) for r in self.records}
        missing = [i for i in range(self.n_drugs) if (i, 0) not in windows or (i, 1) not in windows]
        if missing:
            warnings.warn(
                f"{len(missing)} drug(s) lack a pre- or post-exposure record, e.g. {missing[:5]}",
                stacklevel=2,
            )

    @property
    def n_records(self) -> int:
        return len(self.records)

    @cached_property
    def X(self) -> np.ndarray:
        X = np.array([design_vector(r) for r in self.records]).reshape(-1, len(DESIGN_COLUMNS))
        X.setflags(write=False)
        return X

    @cached_property
    def y(self) -> np.ndarray:
        y = np.array([r.n_events for r in self.records], dtype=float)
        y.setflags(write=False)
        return y

    @cached_property
    def m(self) -> np.ndarray:
        m = np.array([r.n_at_risk for r in self.records], dtype=float)
        m.setflags(write=False)
        return m

    @cached_property
    def drug(self) -> np.ndarray:
        d = np.array([r.drug_id for r in self.records], dtype=np.intp)
        d.setflags(write=False)
        return d

    @classmethod
    def from_arrays(cls, drug, age, sex, time, n, events, drug_names=(), n_drugs=None):
        drug = np.asarray(drug, dtype=int)
        if n_drugs is None:
            n_drugs = int(drug.max()) + 1 if drug.size else 0
        records = tuple(
            StratumRecord(int(d), int(a), int(s), int(a) * int(s), int(t), int(nn), int(e))
            for d, a, s, t, nn, e in zip(drug, age, sex, time, n, events)
        )
        return cls(records, n_drugs, tuple(drug_names))

    def subset(self, drugs) -> Dataset:
        """Dataset restricted to ``drugs`` (re-indexed densely in the given order)."""
        remap = {int(d): k for k, d in enumerate(drugs)}
        records = tuple(
            StratumRecord(remap[r.drug_id], r.age_adult, r.sex_female, r.age_sex,
                          r.post_exposure, r.n_at_risk, r.n_events)
            for r in self.records if r.drug_id in remap
        )
        return Dataset(records, len(remap), tuple(self.drug_names[int(d)] for d in drugs))


def _parse_int(text: str, column: str, lineno: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise DataError(f"line {lineno}: column {column!r} is not an integer: {text!r}") from None


def load_dataset(path, names_path=None) -> Dataset:
    """Read a stratum CSV with header ``drug,age,sex,age_sex,time,n,events``.

    Drug labels are mapped to dense 0-based indices in order of first
    appearance. If ``names_path`` is given (two columns: index, label), the
    ``drug`` column may hold either a label from that map or an integer
    index into it, and the map fixes the drug order.
    """
    path = Path(path)
    names = read_drug_names(names_path) if names_path is not None else None
    by_name = {n: i for i, n in enumerate(names)} if names is not None else {}
    labels: dict[str, int] = {}
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise DataError(f"{path}: expected header {','.join(HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise DataError(f"line {lineno}: expected {len(HEADER)} fields, got {len(row)}")
            label = row[0].strip()
            if names is not None and label in by_name:
                drug_id = by_name[label]
            elif names is not None:
                drug_id = _parse_int(label, "drug", lineno)
                if not 0 <= drug_id < len(names):
                    raise DataError(f"line {lineno}: drug index {drug_id} not in name map")
            else:
                drug_id = labels.setdefault(label, len(labels))
            vals = [_parse_int(c, h, lineno) for c, h in zip(row[1:], HEADER[1:])]
            try:
                records.append(StratumRecord(drug_id, *vals))
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
    if names is not None:
        return Dataset(tuple(records), len(names), tuple(names))
    return Dataset(tuple(records), len(labels), tuple(labels))


def write_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` as a stratum CSV using drug labels in the ``drug`` column."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in dataset.records:
            w.writerow([dataset.drug_names[r.drug_id], r.age_adult, r.sex_female, r.age_sex,
                        r.post_exposure, r.n_at_risk, r.n_events])


def read_drug_names(path) -> list[str]:
    names: dict[int, str] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
                continue  # header
            names[_parse_int(row[0], "index", lineno)] = row[1].strip()
    if sorted(names) != list(range(len(names))):
        raise DataError(f"{path}: drug name indices are not dense 0..N-1")
    return [names[i] for i in range(len(names))]


def write_drug_names(dataset: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for i, name in enumerate(dataset.drug_names):
            w.writerow([i, name])
