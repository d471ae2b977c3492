"""Data model and readers/writers for label volumes, structure maps and cohort tables.

On-disk formats:

* NIfTI-1 single file (``n+1``), uncompressed, 3-D, uint8/int16/int32 voxels.
  Voxels are stored x-fastest, so arrays are indexed ``labels[x, y, z]``.
* Structure map: JSON object with ``structures`` (name -> list of labels),
  ``tumor_components`` (name -> label) and optional ``ignored_labels``.
* Cohort CSV: ``subject_id,time_months,event`` plus any numeric clinical
  columns; ``NA`` marks a missing value.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    FormatError,
    ParseError,
    TruncatedFileError,
    UnsupportedError,
    ValidationError,
)

TUMOR_COMPONENTS = ("edema", "enhancing", "nonenhancing", "cavity")
MISSING = "NA"
REQUIRED_COHORT_COLUMNS = ("subject_id", "time_months", "event")


# ---------------------------------------------------------------------------
# Label volumes


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Dense 3-D integer label grid with physical voxel spacing in mm."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValidationError(f"label volume must be 3-D, got shape {labels.shape}")
        if min(labels.shape) < 1:
            raise ValidationError(f"label volume has an empty axis: {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError(f"labels must be integers, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise ValidationError("labels must be non-negative")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValidationError(f"spacing must be 3 positive reals, got {self.spacing}")
        labels = labels.copy()
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def same_grid(self, other: "LabelVolume") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.labels.shape == other.labels.shape
            and bool(np.array_equal(self.labels, other.labels))
        )

    __hash__ = None


_NIFTI_DTYPES = {2: ("u1", 8), 4: ("i2", 16), 8: ("i4", 32)}


def read_nifti(path: str | Path) -> LabelVolume:
    """Read a 3-D integer NIfTI-1 label volume.

    The affine and ``scl_slope``/``scl_inter`` are ignored; label data is used
    as stored.
    """
    buf = Path(path).read_bytes()
    if len(buf) < 348:
        raise TruncatedFileError(f"{path}: file shorter than a NIfTI-1 header")

    if struct.unpack_from("<i", buf, 0)[0] == 348:
        endian = "<"
    elif struct.unpack_from(">i", buf, 0)[0] == 348:
        endian = ">"
    else:
        raise FormatError(f"{path}: sizeof_hdr is not 348")

    magic = buf[344:348]
    if magic == b"ni1\x00":
        raise UnsupportedError(f"{path}: two-file (.hdr/.img) NIfTI is not supported")
    if magic != b"n+1\x00":
        raise FormatError(f"{path}: bad NIfTI-1 magic {magic!r}")

    dim = struct.unpack_from(endian + "8h", buf, 40)
    if dim[0] != 3:
        raise UnsupportedError(f"{path}: only 3-D volumes are supported (dim[0]={dim[0]})")
    dims = dim[1:4]
    if min(dims) < 1:
        raise FormatError(f"{path}: non-positive dimension {dims}")

    datatype, bitpix = struct.unpack_from(endian + "2h", buf, 70)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedError(f"{path}: unsupported datatype code {datatype}")
    code, expected_bits = _NIFTI_DTYPES[datatype]
    if bitpix != expected_bits:
        raise FormatError(f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}")

    pixdim = struct.unpack_from(endian + "8f", buf, 76)
    vox_offset = struct.unpack_from(endian + "f", buf, 108)[0]
    if not math.isfinite(vox_offset) or vox_offset < 348:
        raise FormatError(f"{path}: invalid vox_offset {vox_offset}")
    offset = int(vox_offset)

    dtype = np.dtype(endian + code)
    count = int(np.prod(dims))
    if len(buf) < offset + count * dtype.itemsize:
        raise TruncatedFileError(
            f"{path}: payload truncated ({len(buf) - offset} of "
            f"{count * dtype.itemsize} bytes)"
        )
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    data = data.reshape(dims, order="F").astype(dtype.newbyteorder("="))
    return LabelVolume(data, tuple(float(p) for p in pixdim[1:4]))


def write_nifti(path: str | Path, volume: LabelVolume, dtype: str | None = None) -> None:
    """Write ``volume`` as a little-endian single-file NIfTI-1.

    Spacing is stored as float32, so only float32-representable spacings
    round-trip exactly.
    """
    if dtype is None:
        top = int(volume.labels.max())
        dtype = "uint8" if top <= 0xFF else "int16" if top <= 0x7FFF else "int32"
    codes = {"uint8": 2, "int16": 4, "int32": 8}
    if dtype not in codes:
        raise UnsupportedError(f"cannot write datatype {dtype}")
    datatype = codes[dtype]
    np_dtype = np.dtype("<" + _NIFTI_DTYPES[datatype][0])
    info = np.iinfo(np_dtype)
    if volume.labels.max() > info.max:
        raise ValidationError(f"labels exceed the range of {dtype}")

    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *volume.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, _NIFTI_DTYPES[datatype][1])
    struct.pack_into("<8f", hdr, 76, 1.0, *volume.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", hdr, 108, 352.0, 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    hdr[344:348] = b"n+1\x00"
    payload = volume.labels.astype(np_dtype).tobytes(order="F")
    Path(path).write_bytes(bytes(hdr) + b"\x00" * 4 + payload)


# ---------------------------------------------------------------------------
# Structure maps


@dataclass(frozen=True)
class StructureMap:
    """Ordered anatomical structures and tumor components with their labels."""

    structures: tuple[tuple[str, frozenset[int]], ...]
    tumor_components: tuple[tuple[str, int], ...]
    ignored_labels: frozenset[int] = frozenset()

    def __post_init__(self):
        names = [name for name, _ in self.structures]
        if len(set(names)) != len(names):
            raise ValidationError("structure names must be unique")
        seen: dict[int, str] = {}
        for name, labels in self.structures:
            if not labels:
                raise ValidationError(f"structure {name!r} has no labels")
            for lab in labels:
                _check_label(lab, name)
                if lab in seen:
                    raise ValidationError(
                        f"label {lab} assigned to both {seen[lab]!r} and {name!r}"
                    )
                seen[lab] = name
        comp_names = [name for name, _ in self.tumor_components]
        if len(set(comp_names)) != len(comp_names):
            raise ValidationError("tumor component names must be unique")
        for name, lab in self.tumor_components:
            if name not in TUMOR_COMPONENTS:
                raise ValidationError(f"unknown tumor component {name!r}")
            _check_label(lab, name)
            if lab in seen:
                raise ValidationError(f"label {lab} assigned to both {seen[lab]!r} and {name!r}")
            seen[lab] = name
        for lab in self.ignored_labels:
            _check_label(lab, "ignored_labels")
            if lab in seen:
                raise ValidationError(f"ignored label {lab} is also mapped to {seen[lab]!r}")

    @property
    def structure_names(self) -> list[str]:
        return [name for name, _ in self.structures]

    def labels_of(self, name: str) -> frozenset[int]:
        for n, labels in self.structures:
            if n == name:
                return labels
        raise KeyError(name)

    def component_label(self, name: str) -> int | None:
        for n, lab in self.tumor_components:
            if n == name:
                return lab
        return None

    @property
    def tumor_labels(self) -> frozenset[int]:
        return frozenset(lab for _, lab in self.tumor_components)

    @property
    def known_labels(self) -> frozenset[int]:
        labels = set(self.tumor_labels) | set(self.ignored_labels) | {0}
        for _, labs in self.structures:
            labels |= labs
        return frozenset(labels)

    @classmethod
    def from_dict(cls, data: Mapping) -> "StructureMap":
        if not isinstance(data, Mapping):
            raise ParseError("structure map must be a JSON object")
        allowed = {"structures", "tumor_components", "ignored_labels"}
        unknown = set(data) - allowed
        if unknown:
            raise ParseError(f"unknown structure map keys: {sorted(unknown)}")
        for key in ("structures", "tumor_components"):
            if key not in data:
                raise ParseError(f"structure map is missing required key {key!r}")
            if not isinstance(data[key], Mapping):
                raise ParseError(f"{key!r} must be a JSON object")
        structures = []
        for name, labels in data["structures"].items():
            if isinstance(labels, int) and not isinstance(labels, bool):
                labels = [labels]
            if not isinstance(labels, list) or not all(_is_int(v) for v in labels):
                raise ParseError(f"labels of structure {name!r} must be a list of integers")
            if len(set(labels)) != len(labels):
                raise ValidationError(f"structure {name!r} lists a label twice")
            structures.append((str(name), frozenset(labels)))
        components = []
        for name, lab in data["tumor_components"].items():
            if not _is_int(lab):
                raise ParseError(f"label of tumor component {name!r} must be an integer")
            components.append((str(name), lab))
        ignored = data.get("ignored_labels", [])
        if not isinstance(ignored, list) or not all(_is_int(v) for v in ignored):
            raise ParseError("'ignored_labels' must be a list of integers")
        return cls(tuple(structures), tuple(components), frozenset(ignored))

    def to_dict(self) -> dict:
        return {
            "structures": {name: sorted(labs) for name, labs in self.structures},
            "tumor_components": dict(self.tumor_components),
            "ignored_labels": sorted(self.ignored_labels),
        }


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_label(lab: int, owner: str) -> None:
    if lab <= 0:
        raise ValidationError(f"{owner}: label {lab} must be positive (0 is background)")


def read_structure_map(path: str | Path) -> StructureMap:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return StructureMap.from_dict(data)


def default_structure_map() -> StructureMap:
    """The 26 Hd95 structures plus four tumor components (FreeSurfer label values)."""
    text = resources.files("gliomorph").joinpath("data/default_structure_map.json").read_text()
    return StructureMap.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Cohorts and feature tables


@dataclass(frozen=True)
class SurvivalRecord:
    subject_id: str
    time: float
    event: bool

    def __post_init__(self):
        if not (isinstance(self.time, (int, float, np.floating)) and self.time > 0):
            raise ValidationError(f"{self.subject_id}: time must be > 0, got {self.time}")
        if not math.isfinite(self.time):
            raise ValidationError(f"{self.subject_id}: time must be finite")
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "event", bool(self.event))


def survival_arrays(records: Sequence[SurvivalRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(time, event) arrays from records."""
    time = np.fromiter((r.time for r in records), dtype=float, count=len(records))
    event = np.fromiter((r.event for r in records), dtype=bool, count=len(records))
    return time, event


def check_unique_ids(ids: Iterable[str]) -> None:
    seen = set()
    for sid in ids:
        if sid in seen:
            raise ValidationError(f"duplicate subject_id {sid!r}")
        seen.add(sid)


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Subjects x named numeric features; NaN marks a missing cell."""

    subject_ids: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = tuple(str(s) for s in self.subject_ids)
        cols = tuple(str(c) for c in self.columns)
        values = np.array(self.values, dtype=float, copy=True).reshape(len(ids), len(cols))
        check_unique_ids(ids)
        if len(set(cols)) != len(cols):
            raise ValidationError("feature column names must be unique")
        values.flags.writeable = False
        object.__setattr__(self, "subject_ids", ids)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.subject_ids)

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (
            self.subject_ids == other.subject_ids
            and self.columns == other.columns
            and bool(np.array_equal(self.values, other.values, equal_nan=True))
        )

    __hash__ = None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self._index(name)]

    def _index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise ValidationError(f"unknown feature column {name!r}") from None

    def select(self, columns: Sequence[str]) -> "FeatureTable":
        idx = [self._index(c) for c in columns]
        return FeatureTable(self.subject_ids, tuple(columns), self.values[:, idx])

    def take(self, rows: Sequence[int] | np.ndarray) -> "FeatureTable":
        rows = np.asarray(rows, dtype=int)
        return FeatureTable(
            tuple(self.subject_ids[i] for i in rows), self.columns, self.values[rows]
        )

    def hstack(self, other: "FeatureTable") -> "FeatureTable":
        """Join columns of ``other`` by subject_id (row order of ``self`` kept)."""
        pos = {sid: i for i, sid in enumerate(other.subject_ids)}
        missing = [sid for sid in self.subject_ids if sid not in pos]
        if missing:
            raise ValidationError(f"subjects missing from joined table: {missing[:5]}")
        rows = [pos[sid] for sid in self.subject_ids]
        return FeatureTable(
            self.subject_ids,
            self.columns + other.columns,
            np.hstack([self.values, other.values[rows]]),
        )

    def missing_columns(self) -> list[str]:
        bad = np.isnan(self.values).any(axis=0)
        return [c for c, b in zip(self.columns, bad) if b]

    def column_medians(self) -> np.ndarray:
        out = np.full(len(self.columns), np.nan)
        for j in range(len(self.columns)):
            col = self.values[:, j]
            col = col[~np.isnan(col)]
            if col.size:
                out[j] = np.median(col)
        return out

    def impute(self, fill: np.ndarray) -> "FeatureTable":
        values = np.where(np.isnan(self.values), np.asarray(fill)[None, :], self.values)
        return FeatureTable(self.subject_ids, self.columns, values)

    def to_csv(self, dest: str | Path | IO[str]) -> None:
        with _open_out(dest) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("subject_id",) + self.columns)
            for sid, row in zip(self.subject_ids, self.values):
                writer.writerow([sid] + [format_number(v) for v in row])

    @classmethod
    def from_csv(cls, source: str | Path | IO[str]) -> "FeatureTable":
        with _open_in(source) as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ParseError("feature CSV is empty")
        header = [h.strip() for h in rows[0]]
        if not header or header[0] != "subject_id":
            raise ParseError("feature CSV must start with a subject_id column")
        ids, values = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0].strip())
            values.append([parse_number(v, lineno, h) for v, h in zip(row[1:], header[1:])])
        return cls(tuple(ids), tuple(header[1:]), np.array(values, dtype=float).reshape(len(ids), len(header) - 1))


def format_number(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return MISSING
    return repr(float(v))


def parse_number(text: str, lineno: int = 0, column: str = "") -> float:
    text = text.strip()
    if text == MISSING:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"line {lineno}: column {column!r}: non-numeric value {text!r}") from None
    if math.isnan(value):
        raise ParseError(f"line {lineno}: column {column!r}: use {MISSING!r} for missing values")
    return value


def read_cohort_csv(
    source: str | Path | IO[str], impute_missing: bool = False
) -> tuple[list[SurvivalRecord], FeatureTable]:
    """Read survival records and the clinical feature table from a cohort CSV.

    Missing clinical values raise :class:`ValidationError` unless
    ``impute_missing`` is set, in which case each column's median is used.
    """
    with _open_in(source) as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("cohort CSV is empty")
    header = [h.strip() for h in rows[0]]
    for col in REQUIRED_COHORT_COLUMNS:
        if col not in header:
            raise ParseError(f"cohort CSV is missing required column {col!r}")
    if len(set(header)) != len(header):
        raise ParseError("cohort CSV has duplicate column names")
    i_id, i_time, i_event = (header.index(c) for c in REQUIRED_COHORT_COLUMNS)
    clinical = [i for i, h in enumerate(header) if h not in REQUIRED_COHORT_COLUMNS]

    records, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[i_id].strip()
        if not sid:
            raise ValidationError(f"line {lineno}: empty subject_id")
        time = parse_number(row[i_time], lineno, "time_months")
        if math.isnan(time) or time <= 0:
            raise ValidationError(f"line {lineno}: time_months must be > 0, got {row[i_time]!r}")
        event_text = row[i_event].strip()
        if event_text not in ("0", "1"):
            raise ParseError(f"line {lineno}: event must be 0 or 1, got {event_text!r}")
        records.append(SurvivalRecord(sid, time, event_text == "1"))
        values.append([parse_number(row[i], lineno, header[i]) for i in clinical])

    check_unique_ids(r.subject_id for r in records)
    table = FeatureTable(
        tuple(r.subject_id for r in records),
        tuple(header[i] for i in clinical),
        np.array(values, dtype=float).reshape(len(records), len(clinical)),
    )
    missing = table.missing_columns()
    if missing:
        if not impute_missing:
            raise ValidationError(f"missing clinical values in columns {missing}")
        table = table.impute(table.column_medians())
    return records, table


def write_cohort_csv(
    dest: str | Path | IO[str],
    records: Sequence[SurvivalRecord],
    table: FeatureTable | None = None,
) -> None:
    if table is not None and table.subject_ids != tuple(r.subject_id for r in records):
        raise ValidationError("feature table rows do not match the records")
    columns = table.columns if table is not None else ()
    with _open_out(dest) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REQUIRED_COHORT_COLUMNS + columns)
        for i, rec in enumerate(records):
            extra = [format_number(v) for v in table.values[i]] if table is not None else []
            writer.writerow([rec.subject_id, repr(rec.time), int(rec.event)] + extra)


class _Passthrough:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        return False


def _open_in(source):
    if isinstance(source, (str, Path)):
        if str(source) == "-":
            return _Passthrough(sys.stdin)
        return open(source, newline="", encoding="utf-8")
    return _Passthrough(source)


def _open_out(dest):
    if isinstance(dest, (str, Path)):
        if str(dest) == "-":
            return _Passthrough(sys.stdout)
        return open(dest, "w", newline="", encoding="utf-8")
    return _Passthrough(dest)


def cohort_to_string(records, table=None) -> str:
    buf = io.StringIO()
    write_cohort_csv(buf, records, table)
    return buf.getvalue()
