"""Core data structures shared by every pipeline stage.

Missing values are stored as NaN inside the float matrix; NaN is the one
and only missing marker. Linear-scale matrices never hold values <= 0
(zeros from upstream tools are converted to missing at ingest).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import AlignmentError, DesignError

LINEAR = "linear"
LOG2 = "log2"

FLAG_REVERSE = "reverse"
FLAG_CONTAMINANT = "contaminant"
FLAG_ONLY_BY_SITE = "only_by_site"
ALL_FLAGS = frozenset({FLAG_REVERSE, FLAG_CONTAMINANT, FLAG_ONLY_BY_SITE})


class ExpressionMatrix:
    """Proteins x samples matrix with explicit missingness and a scale tag."""

    __slots__ = ("row_ids", "col_ids", "values", "scale", "_row_index")

    def __init__(self, row_ids, col_ids, values, scale=LINEAR):
        row_ids = list(row_ids)
        col_ids = list(col_ids)
        values = np.asarray(values, dtype=float)
        if values.shape != (len(row_ids), len(col_ids)):
            raise ValueError(
                f"matrix shape {values.shape} does not match "
                f"{len(row_ids)} rows x {len(col_ids)} columns"
            )
        if len(set(row_ids)) != len(row_ids):
            raise ValueError("duplicate row identifiers")
        if len(set(col_ids)) != len(col_ids):
            raise ValueError("duplicate column names")
        if scale not in (LINEAR, LOG2):
            raise ValueError(f"unknown scale {scale!r}")
        finite_ok = np.isfinite(values) | np.isnan(values)
        if not finite_ok.all():
            raise ValueError("infinite values are not allowed; use NaN for missing")
        if scale == LINEAR:
            present = ~np.isnan(values)
            if (values[present] <= 0).any():
                raise ValueError("linear-scale values must be strictly positive")
        self.row_ids = row_ids
        self.col_ids = col_ids
        self.values = values
        self.values.setflags(write=False)
        self.scale = scale
        self._row_index = {r: i for i, r in enumerate(row_ids)}

    @property
    def shape(self):
        return self.values.shape

    def missing_mask(self):
        """Boolean array, True where the value is missing."""
        return np.isnan(self.values)

    def observed_mask(self):
        return ~np.isnan(self.values)

    def col_indices(self, names: Iterable[str]):
        idx = {c: j for j, c in enumerate(self.col_ids)}
        out = []
        for n in names:
            if n not in idx:
                raise DesignError(f"unknown column name: {n!r}")
            out.append(idx[n])
        return np.asarray(out, dtype=int)

    def row_position(self, row_id) -> int:
        return self._row_index[row_id]

    def with_values(self, values, scale=None):
        """Copy with new values (same ids); scale defaults to current."""
        return ExpressionMatrix(
            self.row_ids, self.col_ids, values, self.scale if scale is None else scale
        )

    def take_rows(self, positions):
        positions = list(positions)
        return ExpressionMatrix(
            [self.row_ids[i] for i in positions],
            self.col_ids,
            self.values[positions, :],
            self.scale,
        )

    def __eq__(self, other):
        if not isinstance(other, ExpressionMatrix):
            return NotImplemented
        return (
            self.row_ids == other.row_ids
            and self.col_ids == other.col_ids
            and self.scale == other.scale
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def display_id(protein_group_id: str) -> str:
    """First accession token of a protein-group id; the full string stays the key."""
    return protein_group_id.split(";", 1)[0]


@dataclass(frozen=True)
class ProteinRecord:
    protein_id: str
    gene_names: str = ""
    description: str = ""
    peptide_count: int | None = None
    unique_peptide_count: int | None = None
    psm_counts: dict = field(default_factory=dict)
    flags: frozenset = frozenset()

    def __post_init__(self):
        if (
            self.peptide_count is not None
            and self.unique_peptide_count is not None
            and self.unique_peptide_count > self.peptide_count
        ):
            raise ValueError(
                f"{self.protein_id}: unique peptides exceed total peptides"
            )
        unknown = set(self.flags) - ALL_FLAGS
        if unknown:
            raise ValueError(f"unknown flags: {sorted(unknown)}")

    @property
    def display_id(self) -> str:
        return display_id(self.protein_id)

    def min_psm_count(self, quantified_samples=None):
        """Minimum per-sample PSM count, restricted to quantified samples when given."""
        counts = self.psm_counts
        if quantified_samples is not None:
            counts = {s: c for s, c in counts.items() if s in quantified_samples}
        counts = {s: c for s, c in counts.items() if c > 0}
        if not counts:
            return None
        return min(counts.values())


class ProteinTable:
    """Ordered protein metadata aligned row-for-row with an ExpressionMatrix."""

    __slots__ = ("records", "_index")

    def __init__(self, records: Iterable[ProteinRecord]):
        self.records = list(records)
        self._index = {r.protein_id: i for i, r in enumerate(self.records)}
        if len(self._index) != len(self.records):
            raise ValueError("duplicate protein ids in table")

    @property
    def row_ids(self):
        return [r.protein_id for r in self.records]

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> ProteinRecord:
        return self.records[i]

    def get(self, protein_id) -> ProteinRecord:
        return self.records[self._index[protein_id]]

    def take(self, positions):
        return ProteinTable(self.records[i] for i in positions)


@dataclass(frozen=True)
class Group:
    name: str
    pattern: str
    columns: tuple

    def __post_init__(self):
        if not self.columns:
            raise DesignError(f"group {self.name!r} matched no columns")


class GroupDesign:
    """Ordered experimental groups, each a set of matrix columns."""

    __slots__ = ("groups",)

    def __init__(self, groups: Iterable[Group]):
        self.groups = list(groups)
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise DesignError("group names must be unique")

    def __iter__(self):
        return iter(self.groups)

    def __len__(self):
        return len(self.groups)

    def names(self):
        return [g.name for g in self.groups]

    def group(self, name) -> Group:
        for g in self.groups:
            if g.name == name:
                return g
        raise DesignError(f"unknown group: {name!r}")

    def comparison_columns(self, group_a, group_b):
        a, b = self.group(group_a), self.group(group_b)
        overlap = set(a.columns) & set(b.columns)
        if overlap:
            raise DesignError(
                f"groups {group_a!r} and {group_b!r} share columns: {sorted(overlap)}"
            )
        return a.columns, b.columns


def valid_values_per_group(matrix: ExpressionMatrix, design: GroupDesign):
    """Count non-missing cells per row per group.

    Returns an array of shape (n_rows, n_groups) in design order.
    """
    observed = matrix.observed_mask()
    counts = np.empty((matrix.shape[0], len(design)), dtype=int)
    for gi, group in enumerate(design):
        idx = matrix.col_indices(group.columns)
        counts[:, gi] = observed[:, idx].sum(axis=1)
    return counts


def align(table: ProteinTable, matrix: ExpressionMatrix):
    """Reorder the table to the matrix row order; error on id set mismatch."""
    table_ids = set(table.row_ids)
    matrix_ids = set(matrix.row_ids)
    if table_ids != matrix_ids:
        only_table = sorted(table_ids - matrix_ids)
        only_matrix = sorted(matrix_ids - table_ids)
        parts = []
        if only_table:
            parts.append(f"only in table: {only_table}")
        if only_matrix:
            parts.append(f"only in matrix: {only_matrix}")
        raise AlignmentError("; ".join(parts))
    ordered = ProteinTable(table.get(rid) for rid in matrix.row_ids)
    return ordered, matrix
