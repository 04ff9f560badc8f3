"""Observed-data container with role-tagged columns and CSV ingest/emit.

Every estimator consumes a :class:`Dataset`. Columns are numeric vectors of a
common length; a :class:`ColumnRoles` record says which column is the outcome
``Y``, the binary treatment ``A``, the covariates ``X``, the treatment
confounding proxies ``Z`` and the outcome confounding proxies ``W``.
Simulated data may also carry hidden confounder columns ``U`` that no
estimator is allowed to read.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError


def _as_tuple(names) -> tuple[str, ...]:
    if names is None:
        return ()
    if isinstance(names, str):
        return (names,)
    return tuple(names)


@dataclass(frozen=True)
class ColumnRoles:
    """Names of the columns playing each role.

    Order within ``covariates``, ``treatment_proxies`` and ``outcome_proxies``
    is significant: it fixes the ordering of bridge-function bases.
    """

    outcome: str
    treatment: str
    covariates: tuple[str, ...] = ()
    treatment_proxies: tuple[str, ...] = ()
    outcome_proxies: tuple[str, ...] = ()
    hidden: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("covariates", "treatment_proxies", "outcome_proxies", "hidden"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        if not self.treatment_proxies:
            raise SchemaError("at least one treatment confounding proxy (Z) is required")
        if not self.outcome_proxies:
            raise SchemaError("at least one outcome confounding proxy (W) is required")
        seen: dict[str, str] = {}
        for role, names in self._role_items():
            for name in names:
                if not isinstance(name, str) or not name:
                    raise SchemaError(f"invalid column name {name!r} for role {role}")
                if name in seen:
                    raise SchemaError(
                        f"column {name!r} assigned to both {seen[name]} and {role}"
                    )
                seen[name] = role

    def _role_items(self):
        return (
            ("outcome", (self.outcome,)),
            ("treatment", (self.treatment,)),
            ("covariates", self.covariates),
            ("treatment_proxies", self.treatment_proxies),
            ("outcome_proxies", self.outcome_proxies),
            ("hidden", self.hidden),
        )

    @property
    def observed(self) -> tuple[str, ...]:
        """Observed columns in canonical order Y, A, X, Z, W."""
        return (
            (self.outcome, self.treatment)
            + self.covariates
            + self.treatment_proxies
            + self.outcome_proxies
        )

    @property
    def all_columns(self) -> tuple[str, ...]:
        return self.observed + self.hidden

    def without_hidden(self) -> "ColumnRoles":
        return ColumnRoles(
            self.outcome,
            self.treatment,
            self.covariates,
            self.treatment_proxies,
            self.outcome_proxies,
        )

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "treatment": self.treatment,
            "covariates": list(self.covariates),
            "treatment_proxies": list(self.treatment_proxies),
            "outcome_proxies": list(self.outcome_proxies),
            "hidden": list(self.hidden),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnRoles":
        return cls(
            outcome=d["outcome"],
            treatment=d["treatment"],
            covariates=d.get("covariates", ()),
            treatment_proxies=d.get("treatment_proxies", ()),
            outcome_proxies=d.get("outcome_proxies", ()),
            hidden=d.get("hidden", ()),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable rectangular numeric data with validated column roles."""

    columns: Mapping[str, np.ndarray]
    roles: ColumnRoles
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        cols = {}
        n = None
        for name in self.roles.all_columns:
            if name not in self.columns:
                raise SchemaError(f"missing column {name!r}", path=name)
            arr = np.array(self.columns[name], dtype=float).reshape(-1)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValidationError(
                    f"column {name!r} has length {arr.shape[0]}, expected {n}"
                )
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise ValidationError(
                    f"column {name!r} has a missing or non-finite value at row {bad[0]}",
                    row=int(bad[0]),
                )
            arr.setflags(write=False)
            cols[name] = arr
        if not n:
            raise ValidationError("dataset must have at least one row")
        a = cols[self.roles.treatment]
        bad = np.flatnonzero((a != 0) & (a != 1))
        if bad.size:
            raise ValidationError(
                f"treatment column {self.roles.treatment!r} must be 0/1; "
                f"found {a[bad[0]]!r} at row {bad[0]}",
                row=int(bad[0]),
            )
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return self.n

    @property
    def y(self) -> np.ndarray:
        return self.columns[self.roles.outcome]

    @property
    def a(self) -> np.ndarray:
        return self.columns[self.roles.treatment]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into an ``(n, len(names))`` array."""
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[c] for c in names])

    def take(self, indices) -> "Dataset":
        """Rows selected by ``indices`` (with repetition allowed)."""
        idx = np.asarray(indices)
        return Dataset({k: v[idx] for k, v in self.columns.items()}, self.roles)

    def row(self, i: int) -> "Dataset":
        return self.take([i])

    def observed(self) -> "Dataset":
        """Copy without the hidden columns."""
        roles = self.roles.without_hidden()
        return Dataset({k: self.columns[k] for k in roles.all_columns}, roles)

    def with_roles(self, roles: ColumnRoles) -> "Dataset":
        return Dataset(self.columns, roles)

    def equals(self, other: "Dataset") -> bool:
        if self.roles != other.roles or self.n != other.n:
            return False
        return all(np.array_equal(self[c], other[c]) for c in self.roles.all_columns)


def _format(x: float) -> str:
    return format(x, ".17g")


def read_csv(path, roles: ColumnRoles) -> Dataset:
    """Load a CSV file with a header row into a validated :class:`Dataset`.

    Only the columns named in ``roles`` are kept. Row numbers in error
    messages count data rows from 1 (the header is not counted).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        index = {}
        for name in roles.all_columns:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}", path=name)
            index[name] = header.index(name)
        values: dict[str, list[float]] = {name: [] for name in roles.all_columns}
        for rownum, record in enumerate(reader, start=1):
            if not record:
                continue
            for name, j in index.items():
                cell = record[j].strip() if j < len(record) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}, column {name!r}: cannot parse {cell!r}",
                        row=rownum,
                        column=name,
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(
                        f"{path}: row {rownum}, column {name!r}: non-finite value {cell!r}",
                        row=rownum,
                        column=name,
                    )
                values[name].append(v)
    a = values[roles.treatment]
    for rownum, v in enumerate(a, start=1):
        if v not in (0.0, 1.0):
            raise ValidationError(
                f"{path}: row {rownum}: treatment {roles.treatment!r} = {v!r} is not 0/1",
                row=rownum,
            )
    return Dataset({k: np.asarray(v, dtype=float) for k, v in values.items()}, roles)


def write_csv(data: Dataset, path, include_hidden: bool = True) -> None:
    """Write ``data`` as CSV; values use 17 significant digits (exact round trip)."""
    names: Iterable[str] = data.roles.all_columns if include_hidden else data.roles.observed
    names = list(names)
    cols = [data[c] for c in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for i in range(data.n):
            writer.writerow([_format(c[i]) for c in cols])
