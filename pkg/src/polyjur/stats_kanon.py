"""k-anonymity over CSV record tables and the parameterized analysis assertion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InputError
from .metamodel import ComplianceAssertion
from .vocab import BASE_FRAMEWORK, KANONYMITY_LABEL, KANONYMITY_PARAMETER


@dataclass(frozen=True)
class RecordTable:
    container: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    quasi_identifiers: tuple[str, ...] = ()

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise InputError(f"{self.container}: row {i + 1} has {len(row)} values, expected {width}")
        missing = [q for q in self.quasi_identifiers if q not in self.columns]
        if missing:
            raise InputError(f"{self.container}: quasi-identifiers not among the columns: {', '.join(missing)}")


def read_csv(path: str | Path, container: str, quasi_identifiers: Sequence[str] = ()) -> RecordTable:
    """Header row required; values are trimmed strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty CSV, a header row is required") from None
        rows = tuple(tuple(v.strip() for v in row) for row in reader if row)
    return RecordTable(container, tuple(header), rows, tuple(quasi_identifiers))


def group_labels(table: RecordTable) -> tuple[np.ndarray, int]:
    """Dense group id per row for the quasi-identifier projection."""
    n = len(table.rows)
    ids = np.zeros(n, dtype=np.int64)
    n_groups = 1
    for q in table.quasi_identifiers:
        j = table.columns.index(q)
        _, codes = np.unique(np.array([row[j] for row in table.rows], dtype=object).astype(str), return_inverse=True)
        combined = ids * (int(codes.max()) + 1 if n else 1) + codes.reshape(-1)
        _, ids = np.unique(combined, return_inverse=True)
        ids = ids.reshape(-1).astype(np.int64)
        n_groups = int(ids.max()) + 1 if n else 0
    return ids, n_groups


def compute_k(table: RecordTable) -> int:
    """Smallest cohort size after grouping rows by their quasi-identifier values."""
    if not table.rows:
        raise InputError(f"{table.container}: k is undefined for an empty table")
    ids, n_groups = group_labels(table)
    return _kernels.min_group_size(ids, n_groups)


def emit_analysis(table: RecordTable, scope: str, framework: str = BASE_FRAMEWORK) -> ComplianceAssertion:
    """Ground KAnonymityAnalysis assertion carrying ``minimumCohortSize``."""
    k = compute_k(table)
    return ComplianceAssertion(
        table.container, KANONYMITY_LABEL, scope, framework, True, ((KANONYMITY_PARAMETER, k),)
    )
