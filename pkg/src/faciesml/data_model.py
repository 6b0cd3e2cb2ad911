"""Well-log records: CSV ingestion, validation, well-aware splits and summaries.

The supported input is the contest-style ``training_data.csv`` layout: one row
per depth sample with a facies code, a well name, the measured depth and seven
scalar log attributes. Rows are grouped by well (in order of first appearance)
and sorted by depth inside each well.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from faciesml.errors import (
    DataError,
    ParseError,
    SchemaError,
    UnknownWellError,
    ValidationError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FaciesLabel:
    code: int
    short_name: str
    description: str


FACIES: dict[int, FaciesLabel] = {
    lab.code: lab
    for lab in (
        FaciesLabel(1, "SS", "Nonmarine sandstone"),
        FaciesLabel(2, "CSiS", "Nonmarine coarse siltstone"),
        FaciesLabel(3, "FSiS", "Nonmarine fine siltstone"),
        FaciesLabel(4, "SiSh", "Marine siltstone and shale"),
        FaciesLabel(5, "MS", "Mudstone"),
        FaciesLabel(6, "WS", "Wackestone"),
        FaciesLabel(7, "D", "Dolomite"),
        FaciesLabel(8, "PS", "Packstone-grainstone"),
        FaciesLabel(9, "BS", "Phylloid-algal bafflestone"),
    )
}
FACIES_CODES: tuple[int, ...] = tuple(FACIES)

# CSV header name -> record attribute
COLUMN_FIELDS: dict[str, str] = {
    "Facies": "facies",
    "Well Name": "well",
    "Depth": "depth",
    "GR": "gr",
    "ILD_log10": "ild_log10",
    "DeltaPHI": "delta_phi",
    "PHIND": "phind",
    "PE": "pe",
    "NM_M": "nm_m",
    "RELPOS": "relpos",
}
REQUIRED_COLUMNS: tuple[str, ...] = tuple(COLUMN_FIELDS)

# The seven scalar log attributes used as model inputs.
LOG_ATTRIBUTES: tuple[str, ...] = ("GR", "ILD_log10", "DeltaPHI", "PHIND", "PE", "NM_M", "RELPOS")

# Attribute order of the correlation table.
CORRELATION_ATTRIBUTES: tuple[str, ...] = ("Facies", "Depth") + LOG_ATTRIBUTES


def facies_label(code: int) -> FaciesLabel:
    try:
        return FACIES[int(code)]
    except (KeyError, ValueError, TypeError):
        raise ValidationError(f"facies code {code!r} is outside 1..9") from None


@dataclass(frozen=True)
class WellLogRecord:
    """One depth sample of one well."""

    facies: int
    well: str
    depth: float
    gr: float
    ild_log10: float
    delta_phi: float
    phind: float
    pe: float
    nm_m: int
    relpos: float

    def __post_init__(self):
        if self.facies not in FACIES:
            raise ValidationError(f"facies code {self.facies!r} is outside 1..9", column="Facies")
        if self.nm_m not in (1, 2):
            raise ValidationError(f"NM_M must be 1 or 2, got {self.nm_m!r}", column="NM_M")
        if not self.phind > 0:
            raise ValidationError(f"PHIND must be positive, got {self.phind!r}", column="PHIND")

    @property
    def label(self) -> FaciesLabel:
        return FACIES[self.facies]

    def value(self, column: str):
        return getattr(self, COLUMN_FIELDS[column])


@dataclass(frozen=True)
class Dataset:
    """Immutable, well-grouped and depth-ordered collection of records.

    Use :meth:`from_records` to build one from unordered records; the plain
    constructor only checks that the ordering invariants already hold.
    """

    records: tuple[WellLogRecord, ...]
    source_name: str = "<memory>"
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        last: dict[str, float] = {}
        closed: set[str] = set()
        current = None
        for i, rec in enumerate(self.records):
            if rec.well != current:
                if rec.well in closed:
                    raise DataError(f"records of well {rec.well!r} are not contiguous (index {i})")
                if current is not None:
                    closed.add(current)
                current = rec.well
            prev = last.get(rec.well)
            if prev is not None and not rec.depth > prev:
                if rec.depth == prev:
                    raise ValidationError(
                        f"duplicate depth {rec.depth!r} in well {rec.well!r}", column="Depth"
                    )
                raise DataError(f"well {rec.well!r} is not sorted by depth at index {i}")
            last[rec.well] = rec.depth

    @classmethod
    def from_records(
        cls,
        records: Iterable[WellLogRecord],
        source_name: str = "<memory>",
        warnings: Sequence[str] = (),
    ) -> "Dataset":
        records = list(records)
        order: dict[str, int] = {}
        for rec in records:
            order.setdefault(rec.well, len(order))
        records.sort(key=lambda r: (order[r.well], r.depth))
        return cls(tuple(records), source_name, tuple(warnings))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def wells(self) -> tuple[str, ...]:
        """Well names in order of first appearance."""
        return tuple(dict.fromkeys(r.well for r in self.records))

    def column(self, name: str) -> np.ndarray:
        """Return one CSV column as an array (facies and NM_M as int)."""
        return self._columns[name]

    @cached_property
    def _columns(self) -> dict[str, np.ndarray]:
        out = {}
        for col, attr in COLUMN_FIELDS.items():
            vals = [getattr(r, attr) for r in self.records]
            if attr == "well":
                out[col] = np.array(vals, dtype=object)
            elif attr in ("facies", "nm_m"):
                out[col] = np.array(vals, dtype=np.int64)
            else:
                out[col] = np.array(vals, dtype=np.float64)
        return out

    @property
    def labels(self) -> np.ndarray:
        return self.column("Facies")

    def take(self, indices: Sequence[int]) -> "Dataset":
        """Subset by record index, preserving the original order."""
        idx = sorted(int(i) for i in indices)
        return Dataset(tuple(self.records[i] for i in idx), self.source_name)

    def select_wells(self, wells: Iterable[str], *, exclude: bool = False) -> "Dataset":
        wells = set(wells)
        keep = tuple(r for r in self.records if (r.well in wells) != exclude)
        return Dataset(keep, self.source_name)


# --------------------------------------------------------------------------
# CSV ingestion

def _open_source(source) -> tuple[TextIO, str, bool]:
    if isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        return open(path, newline="", encoding="utf-8"), path, True
    return source, getattr(source, "name", "<stream>"), False


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(
            f"row {row}: non-numeric value {text!r} in column {column!r}", row=row, column=column
        ) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: non-finite value {text!r} in column {column!r}", row=row, column=column)
    return value


def _parse_int(text: str, row: int, column: str) -> int:
    value = _parse_float(text, row, column)
    if value != int(value):
        raise ParseError(f"row {row}: expected an integer in column {column!r}, got {text!r}", row=row, column=column)
    return int(value)


def parse_dataset(source, schema: Sequence[str] = REQUIRED_COLUMNS) -> Dataset:
    """Parse a well-log CSV into a validated :class:`Dataset`.

    Parameters
    ----------
    source : path or text stream
        CSV with a header row. Column names are case-sensitive.
    schema : sequence of str
        Columns that must be present; defaults to :data:`REQUIRED_COLUMNS`.

    Raises
    ------
    SchemaError
        A required column is absent.
    ParseError
        A numeric cell does not parse. ``row`` is the 1-based line number in
        the file (the header is line 1).
    ValidationError
        A facies code outside 1..9, ``PHIND <= 0``, ``NM_M`` not in {1, 2},
        or a duplicated (well, depth) pair.
    """
    stream, name, owned = _open_source(source)
    try:
        reader = csv.reader(stream)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(schema[0], "empty input: no header row") from None
        for col in schema:
            if col not in header:
                raise SchemaError(col)
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(missing[0])
        warnings = []
        extra = [h for h in header if h not in COLUMN_FIELDS]
        if extra:
            msg = f"ignoring unrecognised columns: {', '.join(extra)}"
            logger.warning("%s (%s)", msg, name)
            warnings.append(msg)
        pos = {h: header.index(h) for h in REQUIRED_COLUMNS}

        records = []
        seen: set[tuple[str, float]] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"row {line_no}: expected {len(header)} fields, got {len(row)}", row=line_no
                )
            cell = {h: row[i].strip() for h, i in pos.items()}
            facies = _parse_int(cell["Facies"], line_no, "Facies")
            if facies not in FACIES:
                raise ValidationError(
                    f"row {line_no}: facies code {facies} is outside 1..9", row=line_no, column="Facies"
                )
            phind = _parse_float(cell["PHIND"], line_no, "PHIND")
            if phind <= 0:
                raise ValidationError(
                    f"row {line_no}: PHIND must be positive, got {phind!r}", row=line_no, column="PHIND"
                )
            nm_m = _parse_int(cell["NM_M"], line_no, "NM_M")
            if nm_m not in (1, 2):
                raise ValidationError(
                    f"row {line_no}: NM_M must be 1 or 2, got {nm_m}", row=line_no, column="NM_M"
                )
            well = cell["Well Name"]
            if not well:
                raise ValidationError(f"row {line_no}: empty well name", row=line_no, column="Well Name")
            depth = _parse_float(cell["Depth"], line_no, "Depth")
            if (well, depth) in seen:
                raise ValidationError(
                    f"row {line_no}: duplicate depth {depth!r} in well {well!r}", row=line_no, column="Depth"
                )
            seen.add((well, depth))
            records.append(
                WellLogRecord(
                    facies=facies,
                    well=well,
                    depth=depth,
                    gr=_parse_float(cell["GR"], line_no, "GR"),
                    ild_log10=_parse_float(cell["ILD_log10"], line_no, "ILD_log10"),
                    delta_phi=_parse_float(cell["DeltaPHI"], line_no, "DeltaPHI"),
                    phind=phind,
                    pe=_parse_float(cell["PE"], line_no, "PE"),
                    nm_m=nm_m,
                    relpos=_parse_float(cell["RELPOS"], line_no, "RELPOS"),
                )
            )
    finally:
        if owned:
            stream.close()
    return Dataset.from_records(records, source_name=os.path.basename(name), warnings=warnings)


def dataset_to_csv(dataset: Dataset, target=None) -> str:
    """Write ``dataset`` with the required columns; floats use repr for exact round-trip."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REQUIRED_COLUMNS)
    for rec in dataset.records:
        writer.writerow([_fmt(rec.value(c)) for c in REQUIRED_COLUMNS])
    text = buf.getvalue()
    if target is not None:
        if isinstance(target, (str, os.PathLike)):
            with open(target, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        else:
            target.write(text)
    return text


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# --------------------------------------------------------------------------
# Splits

def split_blind(dataset: Dataset, blind_well: str) -> tuple[Dataset, Dataset]:
    """Return ``(train, blind)`` where ``blind`` holds exactly ``blind_well``."""
    if blind_well not in dataset.wells:
        raise UnknownWellError(blind_well, dataset.wells)
    return (
        dataset.select_wells([blind_well], exclude=True),
        dataset.select_wells([blind_well]),
    )


def validation_indices(n: int, validation_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform row-level split of ``range(n)`` into sorted (fit, validation) indices.

    The validation part has ``ceil(n * validation_fraction)`` rows.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError(f"validation_fraction must be in (0, 1), got {validation_fraction!r}")
    n_val = min(n, math.ceil(round(n * validation_fraction, 9)))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_validation_split(dataset: Dataset, validation_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    fit_idx, val_idx = validation_indices(len(dataset), validation_fraction, seed)
    return dataset.take(fit_idx), dataset.take(val_idx)


# --------------------------------------------------------------------------
# Descriptive statistics

@dataclass(frozen=True)
class AttributeStats:
    min: float
    max: float
    mean: float
    std: float


@dataclass(frozen=True)
class SummaryStats:
    per_well_counts: dict[str, int]
    per_facies_counts: dict[int, int]
    per_attribute: dict[str, AttributeStats]

    @property
    def total(self) -> int:
        return sum(self.per_well_counts.values())


SUMMARY_ATTRIBUTES: tuple[str, ...] = ("Depth",) + LOG_ATTRIBUTES


def summarize(dataset: Dataset) -> SummaryStats:
    """Per-well and per-facies counts plus min/max/mean/std (population) per attribute."""
    if len(dataset) == 0:
        raise DataError("cannot summarize an empty dataset")
    wells = dataset.column("Well Name")
    per_well = {w: int(np.sum(wells == w)) for w in dataset.wells}
    labels = dataset.labels
    per_facies = {c: int(np.sum(labels == c)) for c in FACIES_CODES}
    per_attr = {}
    for col in SUMMARY_ATTRIBUTES:
        x = dataset.column(col).astype(np.float64)
        per_attr[col] = AttributeStats(float(x.min()), float(x.max()), float(x.mean()), float(x.std()))
    return SummaryStats(per_well, per_facies, per_attr)


@dataclass(frozen=True)
class CorrelationMatrix:
    """Pearson correlations; rows/columns of zero-variance attributes are NaN and listed in ``undefined``."""

    names: tuple[str, ...]
    values: np.ndarray
    undefined: tuple[str, ...] = ()

    def __getitem__(self, key: tuple[str, str]) -> float:
        a, b = key
        return float(self.values[self.names.index(a), self.names.index(b)])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "values": [[_json_float(v) for v in row] for row in self.values],
            "undefined": list(self.undefined),
        }


def _json_float(v: float):
    return None if not math.isfinite(v) else float(v)


def correlation_matrix(dataset: Dataset, attributes: Sequence[str] = CORRELATION_ATTRIBUTES) -> CorrelationMatrix:
    """Pearson correlation over ``attributes`` with the facies code treated as numeric."""
    if len(dataset) < 2:
        raise DataError("correlation needs at least 2 records")
    data = np.column_stack([dataset.column(a).astype(np.float64) for a in attributes])
    centred = data - data.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centred, centred))
    k = len(attributes)
    values = np.full((k, k), np.nan)
    defined = norms > 0
    for i in range(k):
        if not defined[i]:
            continue
        values[i, i] = 1.0
        for j in range(i + 1, k):
            if defined[j]:
                r = float(centred[:, i] @ centred[:, j]) / (norms[i] * norms[j])
                values[i, j] = values[j, i] = min(1.0, max(-1.0, r))
    undefined = tuple(a for a, d in zip(attributes, defined) if not d)
    return CorrelationMatrix(tuple(attributes), values, undefined)


def summary_document(stats: SummaryStats, corr: CorrelationMatrix | None = None) -> dict:
    """JSON-ready document with keys ``wells``, ``facies_counts``, ``attributes``, ``matrix``."""
    return {
        "wells": dict(stats.per_well_counts),
        "facies_counts": {FACIES[c].short_name: n for c, n in stats.per_facies_counts.items()},
        "attributes": {
            name: {f.name: getattr(s, f.name) for f in fields(s)} for name, s in stats.per_attribute.items()
        },
        "matrix": corr.to_dict() if corr is not None else None,
    }


def record_from_mapping(values: Mapping[str, object]) -> WellLogRecord:
    """Build a record from CSV-header keyed values (handy for tests and generators)."""
    kwargs = {attr: values[col] for col, attr in COLUMN_FIELDS.items()}
    return WellLogRecord(**kwargs)
