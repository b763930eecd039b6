"""Temporal panel data: loading, validation, normalization and aggregation."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Self

import numpy as np
import pandas as pd
from scipy import stats

from temporal_rules.errors import (
    DuplicateParam,
    DuplicateRow,
    EmptyDataset,
    MissingCell,
    NonNumericValue,
    RuleSpecSyntaxError,
    UnknownAttribute,
)

log = logging.getLogger(__name__)

ID_COLUMN = "object_id"
TIME_COLUMN = "time"
EQ_TOLERANCE = 1e-9
# Largest |time| that parses to an exact integer.
TIME_LIMIT = 2**53


def format_number(value: float) -> str:
    """Render a value the way panel files store it: integers without ``.0``."""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True, eq=False)
class TemporalDataset:
    """Complete panel of objects x time points x numeric attributes.

    ``values`` has shape ``(objects, time points, attributes)`` and is made
    read-only on construction so datasets can be shared between workers.
    """

    object_ids: tuple[str, ...]
    time_points: tuple[int, ...]
    attribute_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        expected = (len(self.object_ids), len(self.time_points), len(self.attribute_names))
        if values.shape != expected:
            msg = f"values shape {values.shape} does not match panel shape {expected}"
            raise ValueError(msg)
        if len(set(self.object_ids)) != len(self.object_ids):
            msg = "object_ids must be unique"
            raise DuplicateRow(msg)
        if any(b <= a for a, b in zip(self.time_points, self.time_points[1:], strict=False)):
            msg = f"time points must be strictly increasing, got {list(self.time_points)}"
            raise ValueError(msg)
        if not np.all(np.isfinite(values)):
            msg = "panel contains non-finite values"
            raise NonNumericValue(msg)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_objects(self) -> int:
        return len(self.object_ids)

    @property
    def n_times(self) -> int:
        return len(self.time_points)

    def attribute_index(self, name: str) -> int:
        """Position of *name* in ``attribute_names``."""
        try:
            return self.attribute_names.index(name)
        except ValueError:
            msg = f"Unknown attribute {name!r}; available: {list(self.attribute_names)}"
            raise UnknownAttribute(msg) from None

    def series(self, name: str) -> np.ndarray:
        """Return the ``(objects, time points)`` matrix of one attribute."""
        return self.values[:, :, self.attribute_index(name)]

    def stack(self, names: Sequence[str]) -> np.ndarray:
        """Return ``(objects, time points, len(names))`` for the listed attributes."""
        idx = [self.attribute_index(n) for n in names]
        return self.values[:, :, idx]

    def replace_values(self, values: np.ndarray) -> TemporalDataset:
        return TemporalDataset(self.object_ids, self.time_points, self.attribute_names, values)

    def to_frame(self) -> pd.DataFrame:
        """Wide frame with one row per (object, time), objects then times in order."""
        n, t, a = self.values.shape
        frame = pd.DataFrame(self.values.reshape(n * t, a), columns=list(self.attribute_names))
        frame.insert(0, TIME_COLUMN, np.tile(np.asarray(self.time_points), n))
        frame.insert(0, ID_COLUMN, np.repeat(np.asarray(self.object_ids, dtype=object), t))
        return frame

    def to_csv(self, path: Path) -> Path:
        """Write the panel in the ``object_id,time,<attrs...>`` format."""
        frame = self.to_frame()
        for name in self.attribute_names:
            frame[name] = frame[name].map(format_number)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
        log.debug("Panel written", extra={"path": str(path), "rows": len(frame)})
        return path


class AggregateKind(Enum):
    """Per-object reduction over a time series."""

    MEAN = "mean"
    MIN = "min"
    MAX = "max"
    MEDIAN = "median"
    MODE = "mode"
    STDDEV = "stddev"
    COUNT_EQ = "count_eq"
    COUNT_LEQ = "count_leq"

    @property
    def needs_value(self) -> bool:
        return self in (AggregateKind.COUNT_EQ, AggregateKind.COUNT_LEQ)


@dataclass(frozen=True)
class AggregateSpec:
    """One aggregated attribute: ``name = kind(source)``."""

    name: str
    source: str
    kind: AggregateKind
    value: float | None = None

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> Self:
        """Build a spec from a rule document entry ``{name, source, kind, value?}``."""
        try:
            name = str(raw["name"])
            source = str(raw["source"])
            kind = AggregateKind(str(raw["kind"]).lower())
        except KeyError as e:
            msg = f"aggregate entry is missing key {e.args[0]!r}: {dict(raw)}"
            raise RuleSpecSyntaxError(msg) from None
        except ValueError:
            msg = f"unknown aggregate kind {raw.get('kind')!r} for aggregate {raw.get('name')!r}"
            raise RuleSpecSyntaxError(msg) from None
        value = raw.get("value")
        if kind.needs_value:
            if value is None:
                msg = f"aggregate {name!r} of kind {kind.value} requires a 'value'"
                raise RuleSpecSyntaxError(msg)
            value = float(value)
        return cls(name=name, source=source, kind=kind, value=value)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "source": self.source, "kind": self.kind.value}
        if self.value is not None:
            out["value"] = self.value
        return out


@dataclass(frozen=True, eq=False)
class AggregatedView:
    """Per-object scalar attributes derived from a panel."""

    object_ids: tuple[str, ...]
    columns: Mapping[str, np.ndarray] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            msg = f"Unknown aggregate {name!r}; available: {sorted(self.columns)}"
            raise UnknownAttribute(msg) from None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({name: np.asarray(col) for name, col in self.columns.items()})
        frame.insert(0, ID_COLUMN, list(self.object_ids))
        return frame

    def to_csv(self, path: Path) -> Path:
        """Write ``object_id,<aggregate names...>``."""
        frame = self.to_frame()
        for name in self.columns:
            frame[name] = frame[name].map(format_number)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
        return path


# --- Loading ---


def _line(row_pos: int) -> int:
    """1-based file line of a data row (header is line 1)."""
    return row_pos + 2


def load_temporal_csv(path: Path) -> TemporalDataset:
    """Load and validate a wide ``object_id,time,<attrs...>`` panel.

    Rows may come in any order. Objects are ordered by identifier and time
    points ascending, so the result does not depend on row order.
    """
    path = Path(path)
    log.debug("Loading panel", extra={"path": str(path)})
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        msg = f"{path}: file is empty"
        raise EmptyDataset(msg) from None

    columns = [str(c).strip() for c in frame.columns]
    frame.columns = columns
    if columns[:2] != [ID_COLUMN, TIME_COLUMN]:
        msg = f"{path}: header must start with '{ID_COLUMN},{TIME_COLUMN}', got {columns[:2]}"
        raise EmptyDataset(msg)
    attrs = columns[2:]
    if not attrs:
        msg = f"{path}: no attribute columns after '{ID_COLUMN},{TIME_COLUMN}'"
        raise EmptyDataset(msg)
    if frame.empty:
        msg = f"{path}: no data rows"
        raise EmptyDataset(msg)

    frame[ID_COLUMN] = frame[ID_COLUMN].str.strip()
    times = pd.to_numeric(frame[TIME_COLUMN].str.strip(), errors="coerce")
    bad_time = times.isna() | (times != times.round())
    if bad_time.any():
        pos = int(np.flatnonzero(bad_time.to_numpy())[0])
        msg = (
            f"{path}: line {_line(pos)}, column '{TIME_COLUMN}': "
            f"{frame[TIME_COLUMN].iloc[pos]!r} is not an integer"
        )
        raise NonNumericValue(msg)
    too_big = times.abs() > TIME_LIMIT
    if too_big.any():
        pos = int(np.flatnonzero(too_big.to_numpy())[0])
        msg = (
            f"{path}: line {_line(pos)}, column '{TIME_COLUMN}': "
            f"{frame[TIME_COLUMN].iloc[pos]!r} is out of range (|time| <= {TIME_LIMIT})"
        )
        raise NonNumericValue(msg)
    frame[TIME_COLUMN] = times.astype(np.int64)

    for attr in attrs:
        parsed = pd.to_numeric(frame[attr].str.strip(), errors="coerce")
        bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=np.float64, na_value=np.nan))
        if bad.any():
            pos = int(np.flatnonzero(bad.to_numpy())[0])
            msg = (
                f"{path}: line {_line(pos)}, column {attr!r}: "
                f"{frame[attr].iloc[pos]!r} is not a finite number"
            )
            raise NonNumericValue(msg)
        frame[attr] = parsed.astype(np.float64)

    dup = frame.duplicated([ID_COLUMN, TIME_COLUMN], keep="first")
    if dup.any():
        pos = int(np.flatnonzero(dup.to_numpy())[0])
        msg = (
            f"{path}: line {_line(pos)}: duplicate row for object "
            f"{frame[ID_COLUMN].iloc[pos]!r} at time {frame[TIME_COLUMN].iloc[pos]}"
        )
        raise DuplicateRow(msg)

    object_ids = tuple(sorted(frame[ID_COLUMN].unique()))
    time_points = tuple(int(t) for t in sorted(frame[TIME_COLUMN].unique()))
    full = pd.MultiIndex.from_product([object_ids, time_points], names=[ID_COLUMN, TIME_COLUMN])
    indexed = frame.set_index([ID_COLUMN, TIME_COLUMN])
    missing = full.difference(indexed.index, sort=False)
    if len(missing):
        obj, t = sorted(missing)[0]
        msg = f"{path}: missing row for object {obj!r} at time {t}"
        raise MissingCell(msg)

    values = indexed.reindex(full)[attrs].to_numpy(dtype=np.float64)
    dataset = TemporalDataset(
        object_ids=object_ids,
        time_points=time_points,
        attribute_names=tuple(attrs),
        values=values.reshape(len(object_ids), len(time_points), len(attrs)),
    )
    log.info(
        "Panel loaded",
        extra={
            "path": str(path),
            "objects": dataset.n_objects,
            "time_points": dataset.n_times,
            "attributes": list(dataset.attribute_names),
        },
    )
    return dataset


# --- Aggregation ---


def _reduce(series: np.ndarray, spec: AggregateSpec) -> np.ndarray:
    match spec.kind:
        case AggregateKind.MEAN:
            return series.mean(axis=1)
        case AggregateKind.MIN:
            return series.min(axis=1)
        case AggregateKind.MAX:
            return series.max(axis=1)
        case AggregateKind.MEDIAN:
            return np.median(series, axis=1)
        case AggregateKind.MODE:
            # scipy returns the smallest of equally frequent values
            return stats.mode(series, axis=1, keepdims=False).mode.astype(np.float64)
        case AggregateKind.STDDEV:
            return series.std(axis=1, ddof=0)
        case AggregateKind.COUNT_EQ:
            return (np.abs(series - spec.value) <= EQ_TOLERANCE).sum(axis=1).astype(np.float64)
        case AggregateKind.COUNT_LEQ:
            return (series <= spec.value).sum(axis=1).astype(np.float64)
    msg = f"unsupported aggregate kind {spec.kind}"
    raise ValueError(msg)


def aggregate(data: TemporalDataset, specs: Iterable[AggregateSpec]) -> AggregatedView:
    """Reduce each object's series to one value per spec."""
    columns: dict[str, np.ndarray] = {}
    for spec in specs:
        if spec.name in columns:
            msg = f"aggregate name {spec.name!r} is declared twice"
            raise DuplicateParam(msg)
        column = _reduce(data.series(spec.source), spec)
        column.setflags(write=False)
        columns[spec.name] = column
    log.debug("Aggregated view built", extra={"aggregates": list(columns)})
    return AggregatedView(object_ids=data.object_ids, columns=columns)


def normalize_minmax(data: TemporalDataset, attrs: Iterable[str]) -> TemporalDataset:
    """Rescale listed attributes to [0, 1] by their global panel min and max.

    A constant attribute maps to all zeros; unlisted attributes are untouched.
    """
    values = np.array(data.values)
    for name in attrs:
        idx = data.attribute_index(name)
        col = values[:, :, idx]
        lo, hi = float(col.min()), float(col.max())
        if hi > lo:
            values[:, :, idx] = (col - lo) / (hi - lo)
        else:
            values[:, :, idx] = 0.0
    return data.replace_values(values)
