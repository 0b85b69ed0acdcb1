"""CSV readers and writers for the command-line pipeline.

All data exchange is CSV with mandatory headers.  Times are integer or
decimal years; floats are written with enough digits to round-trip.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .datamodel import Observation
from .errors import CoverageError
from .process import GridTable

__all__ = [
    "read_observations",
    "read_covariates",
    "read_offsets",
    "read_groupings",
    "write_rows",
    "fmt",
    "quantile_label",
]


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def quantile_label(q: float) -> str:
    return "median" if q == 0.5 else f"q{100 * q:g}"


def _read_rows(path, required):
    path = Path(path)
    if not path.exists():
        raise CoverageError(f"file not found: {path}")
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise CoverageError(f"{path}: empty file, expected a CSV header")
        missing = [col for col in required if col not in reader.fieldnames]
        if missing:
            raise CoverageError(f"{path}: missing column(s) {missing}")
        return list(reader), reader.fieldnames


def read_observations(path) -> list:
    """``population, time, value, sampling_variance[, source]``."""
    rows, fields = _read_rows(path, ("population", "time", "value", "sampling_variance"))
    return [
        Observation(
            row["population"],
            float(row["time"]),
            float(row["value"]),
            float(row["sampling_variance"]),
            source=row.get("source", "") or "",
        )
        for row in rows
    ]


def read_covariates(path) -> dict:
    """``population, time, name, value`` grouped into one table per name."""
    rows, _ = _read_rows(path, ("population", "time", "name", "value"))
    by_name: dict[str, list] = {}
    for row in rows:
        by_name.setdefault(row["name"], []).append(
            (row["population"], float(row["time"]), float(row["value"]))
        )
    return {
        name: GridTable.from_records(records, name=name)
        for name, records in sorted(by_name.items())
    }


def read_offsets(path) -> GridTable:
    """``population, time, value`` (a ``name`` column, if present, is ignored)."""
    rows, fields = _read_rows(path, ("population", "time", "value"))
    records = [(row["population"], float(row["time"]), float(row["value"])) for row in rows]
    return GridTable.from_records(records, name="offset")


def read_groupings(path) -> dict:
    """``population, level1_group[, level2_group, ...]`` to label tuples."""
    rows, fields = _read_rows(path, ("population",))
    level_cols = [f for f in fields if f != "population"]
    if not level_cols:
        raise CoverageError(f"{path}: needs at least one grouping column")
    return {row["population"]: tuple(row[c] for c in level_cols) for row in rows}


def write_rows(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
