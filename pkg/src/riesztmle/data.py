"""Columnar datasets with role-annotated columns, CSV I/O, and fold assignment.

Columns are stored as float64 vectors. Missing values are tracked by an
explicit validity mask and are only permitted in phase-two columns on rows
where the sampling indicator is zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

BASELINE = "baseline-covariate"
TIME_VARYING = "time-varying-covariate"
TREATMENT = "treatment"
MEDIATOR = "mediator"
OUTCOME = "outcome"
SAMPLING = "sampling-indicator"

_TIMED_KINDS = (TIME_VARYING, TREATMENT)
_KINDS = (BASELINE, TIME_VARYING, TREATMENT, MEDIATOR, OUTCOME, SAMPLING)


class SchemaError(ValueError):
    """Raised when a dataset violates its declared role schema."""


class ParseError(ValueError):
    """Raised when a CSV cell cannot be parsed; carries row/column location."""


@dataclass(frozen=True)
class ColumnRole:
    """Role of a column: kind plus a time index for timed kinds.

    Timed kinds are ``treatment`` and ``time-varying-covariate``; the
    convention is that ``time-varying-covariate(t)`` is realized before
    ``treatment(t)``.
    """

    kind: str
    t: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r}")
        if self.kind in _TIMED_KINDS:
            if self.t is None or self.t < 0:
                raise SchemaError(f"{self.kind} requires a nonnegative time index")
        elif self.t is not None:
            raise SchemaError(f"{self.kind} does not take a time index")

    @classmethod
    def parse(cls, text: str) -> "ColumnRole":
        """Parse a role string such as ``"treatment:1"`` or ``"outcome"``."""
        if ":" in text:
            kind, _, idx = text.partition(":")
            try:
                t = int(idx)
            except ValueError:
                raise SchemaError(f"bad time index in role {text!r}") from None
            return cls(kind, t)
        return cls(text)

    def __str__(self) -> str:
        return self.kind if self.t is None else f"{self.kind}:{self.t}"


@dataclass(frozen=True)
class Dataset:
    """Immutable columnar dataset.

    ``columns`` maps name to a float64 vector of length ``n``; ``mask`` maps
    name to a boolean validity vector (True where the value is present).
    Columns absent from ``mask`` are fully observed.
    """

    columns: dict[str, np.ndarray]
    schema: dict[str, ColumnRole]
    mask: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.columns:
            raise SchemaError("dataset has no columns")
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) != 1:
            raise SchemaError("columns have unequal lengths")
        n = lengths.pop()
        if n < 1:
            raise SchemaError("dataset must have at least one row")
        for name in self.schema:
            if name not in self.columns:
                raise SchemaError(f"schema names missing column {name!r}")
        for name in self.columns:
            if name not in self.schema:
                raise SchemaError(f"column {name!r} has no schema role")
        for name, col in self.columns.items():
            arr = np.ascontiguousarray(col, dtype=np.float64)
            arr.setflags(write=False)
            self.columns[name] = arr
        for name, m in self.mask.items():
            arr = np.ascontiguousarray(m, dtype=bool)
            arr.setflags(write=False)
            self.mask[name] = arr
        self._validate_roles()
        self._validate_missing()

    def _validate_roles(self):
        outcomes = [n for n, r in self.schema.items() if r.kind == OUTCOME]
        if len(outcomes) != 1:
            raise SchemaError(f"need exactly one outcome column, found {len(outcomes)}")
        sampling = [n for n, r in self.schema.items() if r.kind == SAMPLING]
        if len(sampling) > 1:
            raise SchemaError("at most one sampling-indicator column allowed")
        if sampling:
            vals = self.columns[sampling[0]]
            present = self.mask.get(sampling[0], np.ones(self.n, dtype=bool))
            if not np.all(present):
                raise SchemaError("sampling indicator may not be missing")
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise SchemaError("sampling indicator values must be in {0, 1}")
        times = sorted(r.t for r in self.schema.values() if r.kind == TREATMENT)
        if times and times != list(range(1, len(times) + 1)):
            raise SchemaError(
                f"treatment time indices must form a contiguous range 1..T, got {times}"
            )

    def _validate_missing(self):
        sampling = self.sampling_column()
        delta = self.columns[sampling] if sampling else None
        for name, col in self.columns.items():
            present = self.mask.get(name)
            if present is None:
                holes = ~np.isfinite(col)
            else:
                holes = ~present
                holes |= present & ~np.isfinite(col)
            if not holes.any():
                continue
            row = int(np.flatnonzero(holes)[0])
            if delta is None:
                raise SchemaError(
                    f"missing value in column {name!r} at row {row} "
                    "with no sampling indicator present"
                )
            if np.any(holes & (delta == 1.0)):
                row = int(np.flatnonzero(holes & (delta == 1.0))[0])
                raise SchemaError(
                    f"missing value in column {name!r} at row {row} where the "
                    "sampling indicator is 1"
                )

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values())))

    def sampling_column(self) -> str | None:
        for name, role in self.schema.items():
            if role.kind == SAMPLING:
                return name
        return None

    def outcome_column(self) -> str:
        for name, role in self.schema.items():
            if role.kind == OUTCOME:
                return name
        raise SchemaError("no outcome column")

    def treatment_columns(self) -> list[str]:
        """Treatment column names ordered by time index."""
        cols = [(r.t, n) for n, r in self.schema.items() if r.kind == TREATMENT]
        return [n for _, n in sorted(cols)]

    def baseline_columns(self) -> list[str]:
        return [n for n, r in self.schema.items() if r.kind == BASELINE]

    def time_varying_columns(self, max_t: int | None = None) -> list[str]:
        cols = [(r.t, n) for n, r in self.schema.items() if r.kind == TIME_VARYING]
        if max_t is not None:
            cols = [(t, n) for t, n in cols if t <= max_t]
        return [n for _, n in sorted(cols)]

    def mediator_column(self) -> str | None:
        for name, role in self.schema.items():
            if role.kind == MEDIATOR:
                return name
        return None

    def is_missing(self, name: str) -> np.ndarray:
        present = self.mask.get(name)
        if present is None:
            return np.zeros(self.n, dtype=bool)
        return ~present

    def select(self, rows: np.ndarray) -> "Dataset":
        """Row subset as a new Dataset; ``rows`` is a boolean or index array."""
        cols = {name: col[rows] for name, col in self.columns.items()}
        mask = {name: m[rows] for name, m in self.mask.items()}
        mask = {name: m for name, m in mask.items() if not m.all()}
        return Dataset(cols, dict(self.schema), mask)


@dataclass(frozen=True)
class FoldAssignment:
    """Balanced random partition of rows into k folds, deterministic per seed."""

    fold_index: np.ndarray
    k: int
    seed: int

    def __post_init__(self):
        self.fold_index.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.fold_index)

    def fold_rows(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_index == j)


def assign_folds(dataset: Dataset | int, k: int, seed: int) -> FoldAssignment:
    """Assign rows to k balanced folds using a seeded permutation.

    Accepts a Dataset or a plain row count. Fold sizes differ by at most one
    and the assignment is identical for identical (n, k, seed).
    """
    n = dataset if isinstance(dataset, int) else dataset.n
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows n={n}")
    order = np.random.Generator(np.random.Philox(key=[seed, 0xF01D])).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[order] = np.arange(n) % k
    return FoldAssignment(fold, k, seed)


def load_csv(path, schema: dict[str, ColumnRole]) -> Dataset:
    """Load a comma-delimited file with a header row into a Dataset.

    Every schema name must appear in the header; extra file columns are
    ignored. Empty fields are treated as missing and are only legal in
    columns gated by the sampling indicator on rows where it is zero.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        positions = {}
        for name in schema:
            if name not in header:
                raise SchemaError(f"{path}: declared column {name!r} not in header")
            positions[name] = header.index(name)
        raw = {name: [] for name in schema}
        for i, record in enumerate(reader):
            for name, pos in positions.items():
                if pos >= len(record):
                    raise ParseError(f"{path}: row {i} too short; missing column {name!r}")
                raw[name].append(record[pos])
    n = len(next(iter(raw.values())))
    if n == 0:
        raise ParseError(f"{path}: no data rows")
    columns: dict[str, np.ndarray] = {}
    mask: dict[str, np.ndarray] = {}
    for name in schema:
        vals = np.empty(n, dtype=np.float64)
        present = np.ones(n, dtype=bool)
        for i, cell in enumerate(raw[name]):
            text = cell.strip()
            if text == "":
                vals[i] = np.nan
                present[i] = False
                continue
            try:
                vals[i] = float(text)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric value {cell!r} at row {i}, column {name!r}"
                ) from None
        columns[name] = vals
        if not present.all():
            mask[name] = present
    return Dataset(columns, dict(schema), mask)


def write_csv(dataset: Dataset, path) -> None:
    """Write a Dataset back to CSV; masked cells become empty fields.

    Values are written with ``repr`` so reloading reproduces the vectors
    bitwise.
    """
    names = list(dataset.schema)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        missing = {name: dataset.is_missing(name) for name in names}
        for i in range(dataset.n):
            row = []
            for name in names:
                if missing[name][i]:
                    row.append("")
                else:
                    row.append(repr(float(dataset.columns[name][i])))
            writer.writerow(row)
