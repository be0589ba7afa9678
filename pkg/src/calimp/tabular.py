"""Categorical datasets with explicit missing-value handling.

Cells are stored as integer level codes into each variable's label list;
``MISSING`` (-1) marks an absent value. Datasets are immutable: edits go
through :meth:`Dataset.replace_codes`, which returns a new object.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, SchemaError

MISSING = -1

ROLES = ("covariate", "outcome", "target")


@dataclass(frozen=True)
class Variable:
    """A categorical variable: name, ordered level labels, optional role.

    The first label is the reference (base) level wherever dummy coding or
    a base category is needed.
    """

    name: str
    levels: tuple[str, ...]
    role: str = "covariate"

    def __post_init__(self):
        if not self.name:
            raise DataError("variable name must be non-empty")
        if len(self.levels) < 2:
            raise DataError(
                f"variable '{self.name}' needs at least two levels, "
                f"got {len(self.levels)}"
            )
        if len(set(self.levels)) != len(self.levels):
            raise DataError(f"variable '{self.name}' has duplicate level labels")
        if self.role not in ROLES:
            raise DataError(
                f"variable '{self.name}' has unknown role '{self.role}'"
            )

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def code_of(self, label: str) -> int:
        try:
            return self.levels.index(label)
        except ValueError:
            raise DataError(
                f"'{label}' is not a level of variable '{self.name}'"
            ) from None


class Dataset:
    """Rectangular all-categorical data keyed by variable name."""

    def __init__(self, variables, columns):
        """
        Parameters
        ----------
        variables : sequence of Variable
        columns : mapping name -> integer array
            Level codes per variable; -1 encodes a missing cell. All
            columns must have equal length.
        """
        variables = tuple(variables)
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise DataError("duplicate variable names")
        if not variables:
            raise DataError("dataset needs at least one variable")
        lengths = {len(columns[n]) for n in names}
        if len(lengths) != 1:
            raise DataError("columns have unequal lengths")
        self._variables = variables
        self._index = {v.name: v for v in variables}
        cols = {}
        for v in variables:
            arr = np.asarray(columns[v.name], dtype=np.int32).copy()
            bad = (arr != MISSING) & ((arr < 0) | (arr >= v.n_levels))
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise DataError(
                    f"code {int(arr[row])} out of range for variable "
                    f"'{v.name}' at row {row}"
                )
            arr.flags.writeable = False
            cols[v.name] = arr
        self._columns = cols

    # -- basic access ----------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(next(iter(self._columns.values())))

    @property
    def variables(self) -> tuple[Variable, ...]:
        return self._variables

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self._variables)

    def var(self, name: str) -> Variable:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"no variable named '{name}'") from None

    def codes(self, name: str) -> np.ndarray:
        self.var(name)
        return self._columns[name]

    def missing_mask(self, name: str) -> np.ndarray:
        return self.codes(name) == MISSING

    def is_complete(self, name: str) -> bool:
        return not self.missing_mask(name).any()

    def n_missing(self, name: str) -> int:
        return int(self.missing_mask(name).sum())

    def observed_rows(self, name: str) -> np.ndarray:
        return np.flatnonzero(~self.missing_mask(name))

    def missing_rows(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.missing_mask(name))

    def response_indicator(self, name: str) -> np.ndarray:
        """1 where the cell is observed, 0 where it is missing."""
        return (~self.missing_mask(name)).astype(np.int32)

    def level_counts(self, name: str, rows=None) -> np.ndarray:
        """Counts per level among observed cells (optionally row-subset)."""
        c = self.codes(name)
        if rows is not None:
            c = c[rows]
        c = c[c != MISSING]
        return np.bincount(c, minlength=self.var(name).n_levels).astype(np.int64)

    def level_proportions(self, name: str, rows=None) -> np.ndarray:
        counts = self.level_counts(name, rows)
        total = counts.sum()
        if total == 0:
            raise DataError(f"variable '{name}' has no observed cells")
        return counts / total

    # -- derived datasets ------------------------------------------------

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self._variables, {n: self._columns[n][rows] for n in self.names}
        )

    def replace_codes(self, name: str, codes) -> "Dataset":
        """New dataset with one column replaced (same variables)."""
        self.var(name)
        cols = dict(self._columns)
        cols[name] = np.asarray(codes, dtype=np.int32)
        return Dataset(self._variables, cols)

    def decoded_column(self, name: str) -> list:
        """Labels per row; None for missing cells."""
        v = self.var(name)
        return [
            None if c == MISSING else v.levels[c] for c in self._columns[name]
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._variables == other._variables and all(
            np.array_equal(self._columns[n], other._columns[n])
            for n in self.names
        )

    def __repr__(self) -> str:
        return (
            f"Dataset({self.n_rows} rows, "
            f"{', '.join(self.names)})"
        )


def read_csv(path, missing_tokens=("", "NA"), schema=None) -> Dataset:
    """Read a header-first CSV of categorical columns.

    Parameters
    ----------
    path : str or path-like
    missing_tokens : iterable of str
        Cell values treated as missing.
    schema : sequence of Variable, optional
        Fixed variables in column order. Without a schema, levels are
        discovered per column in first-appearance order.

    Raises
    ------
    DataError
        Ragged rows (with 1-based line number) or an empty data section.
    SchemaError
        Header or labels that do not match a supplied schema.
    """
    missing = set(missing_tokens)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno} has {len(row)} fields, "
                    f"expected {len(header)}"
                )
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")

    if schema is not None:
        schema = tuple(schema)
        if [v.name for v in schema] != header:
            raise SchemaError(
                f"{path}: header {header} does not match schema "
                f"{[v.name for v in schema]}"
            )
        lookup = [
            {lab: i for i, lab in enumerate(v.levels)} for v in schema
        ]
        columns = {}
        for j, v in enumerate(schema):
            col = np.empty(len(rows), dtype=np.int32)
            for i, row in enumerate(rows):
                cell = row[j]
                if cell in missing:
                    col[i] = MISSING
                else:
                    try:
                        col[i] = lookup[j][cell]
                    except KeyError:
                        raise SchemaError(
                            f"{path}: line {i + 2}: '{cell}' is not a "
                            f"level of '{v.name}'"
                        ) from None
            columns[v.name] = col
        return Dataset(schema, columns)

    variables = []
    columns = {}
    for j, name in enumerate(header):
        seen: dict[str, int] = {}
        col = np.empty(len(rows), dtype=np.int32)
        for i, row in enumerate(rows):
            cell = row[j]
            if cell in missing:
                col[i] = MISSING
            else:
                col[i] = seen.setdefault(cell, len(seen))
        if len(seen) < 2:
            raise DataError(
                f"{path}: column '{name}' has fewer than two observed levels"
            )
        variables.append(Variable(name, tuple(seen)))
        columns[name] = col
    return Dataset(variables, columns)


def write_csv(ds: Dataset, path) -> None:
    """Write labels (missing cells as empty fields), header first."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ds.names)
        decoded = [ds.decoded_column(n) for n in ds.names]
        for i in range(ds.n_rows):
            writer.writerow(
                ["" if col[i] is None else col[i] for col in decoded]
            )
