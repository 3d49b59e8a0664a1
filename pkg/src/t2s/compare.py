"""Deterministic result-table comparison.

Decides whether a candidate query's result answers the same question as the
ground-truth result: equal row counts, then every ground-truth column must be
present in the candidate (ignoring column names, order-insensitive contents).
Column matching is greedy, left-to-right, lowest candidate index first; the
candidate may carry extra columns without penalty.

Two row-order readings are offered: the default ``COLUMN_MULTISET`` mode
treats each column as an independent sorted multiset; ``STRICT_ROWS``
additionally requires whole rows to agree after sorting (row coherence).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import Decimal

from .model import CellKind, CellValue, ResultTable

# exact_matching_oracle is intended for small test tables only.
ORACLE_MAX_TRUTH_COLUMNS = 8

# Near-zero absolute floor used by tolerant numeric equality; only active when
# a relative tolerance is configured, so tolerance 0 means exact.
ABS_TOLERANCE_FLOOR = Decimal("1e-9")

_KIND_RANK = {
    CellKind.NULL: 0,
    CellKind.BOOL: 1,
    CellKind.INT: 2,
    CellKind.DEC: 2,  # numerics are cross-variant comparable
    CellKind.TEXT: 3,
    CellKind.DATE: 4,
    CellKind.TS: 5,
}


class SizeLimitExceeded(Exception):
    """Oracle input exceeds the configured search bound."""


class CompareMode(enum.Enum):
    COLUMN_MULTISET = "column_multiset"
    STRICT_ROWS = "strict_rows"


@dataclass(frozen=True)
class CompareConfig:
    numeric_tolerance: float = 1e-6
    mode: CompareMode = CompareMode.COLUMN_MULTISET

    def __post_init__(self):
        if self.numeric_tolerance < 0:
            raise ValueError("numeric_tolerance must be >= 0")


@dataclass(frozen=True)
class ColumnMapping:
    """Injective assignment of every truth column index to a candidate index."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        truth_side = [t for t, _ in self.pairs]
        cand_side = [c for _, c in self.pairs]
        if truth_side != list(range(len(self.pairs))):
            raise ValueError("mapping must cover truth columns 0..n-1 in order")
        if len(set(cand_side)) != len(cand_side):
            raise ValueError("mapping must be injective on candidate columns")


class CompareVerdict:
    """Outcome of comparing a candidate table against ground truth."""

    is_correct = False

    def to_json_obj(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Correct(CompareVerdict):
    mapping: ColumnMapping

    is_correct = True

    def to_json_obj(self) -> dict:
        return {"verdict": "correct", "column_mapping": [list(p) for p in self.mapping.pairs]}


@dataclass(frozen=True)
class RowCountMismatch(CompareVerdict):
    truth_rows: int
    candidate_rows: int

    def to_json_obj(self) -> dict:
        return {
            "verdict": "row_count_mismatch",
            "truth_rows": self.truth_rows,
            "candidate_rows": self.candidate_rows,
        }


@dataclass(frozen=True)
class UnmatchedColumn(CompareVerdict):
    truth_column_index: int

    def to_json_obj(self) -> dict:
        return {"verdict": "unmatched_column", "truth_column_index": self.truth_column_index}


@dataclass(frozen=True)
class RowSetMismatch(CompareVerdict):
    def to_json_obj(self) -> dict:
        return {"verdict": "row_set_mismatch"}


def cell_sort_key(cell: CellValue):
    """Fixed total order: Null < Boolean < numeric < Text < Date < Timestamp.

    Numerics (Integer and Decimal) share a rank and order by value; the kind
    tag breaks exact-value ties so sorting is deterministic on any input.
    """
    rank = _KIND_RANK[cell.kind]
    if cell.kind is CellKind.NULL:
        return (rank, 0, "")
    if cell.kind is CellKind.BOOL:
        return (rank, int(cell.value), "")
    if cell.kind in (CellKind.INT, CellKind.DEC):
        return (rank, Decimal(cell.value) if cell.kind is CellKind.INT else cell.value, cell.kind.value)
    return (rank, cell.value, "")


def _numeric_value(cell: CellValue) -> Decimal:
    return Decimal(cell.value) if cell.kind is CellKind.INT else cell.value


def cells_equal(a: CellValue, b: CellValue, cfg: CompareConfig) -> bool:
    """Cell equality under the config: exact, except numeric pairs involving a
    Decimal, which use relative tolerance with a near-zero absolute floor."""
    if a == b:
        return True
    numeric = (CellKind.INT, CellKind.DEC)
    if a.kind in numeric and b.kind in numeric:
        if a.kind is CellKind.INT and b.kind is CellKind.INT:
            return False  # distinct integers are never tolerantly equal
        if cfg.numeric_tolerance == 0:
            return False
        va, vb = _numeric_value(a), _numeric_value(b)
        diff = abs(va - vb)
        scale = max(abs(va), abs(vb))
        return diff <= max(Decimal(str(cfg.numeric_tolerance)) * scale, ABS_TOLERANCE_FLOOR)
    return False


def column_signature(cells, cfg: CompareConfig) -> tuple[CellValue, ...]:
    """Order-insensitive column fingerprint: the cells under the fixed sort."""
    return tuple(sorted(cells, key=cell_sort_key))


def signatures_equal(a, b, cfg: CompareConfig) -> bool:
    return len(a) == len(b) and all(cells_equal(x, y, cfg) for x, y in zip(a, b))


def match_columns_greedy(
    truth: ResultTable, candidate: ResultTable, cfg: CompareConfig
) -> ColumnMapping | UnmatchedColumn:
    """Assign each truth column, left to right, to the lowest-index unused
    candidate column with an equal signature; fail fast on the first truth
    column with no available match."""
    if truth.row_count != candidate.row_count:
        raise ValueError("match_columns_greedy requires equal row counts")
    truth_sigs = [column_signature(cells, cfg) for _, cells in truth.columns]
    cand_sigs = [column_signature(cells, cfg) for _, cells in candidate.columns]

    used: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for ti, tsig in enumerate(truth_sigs):
        for ci, csig in enumerate(cand_sigs):
            if ci in used:
                continue
            if signatures_equal(tsig, csig, cfg):
                used.add(ci)
                pairs.append((ti, ci))
                break
        else:
            return UnmatchedColumn(ti)
    return ColumnMapping(tuple(pairs))


def strict_row_check(
    truth: ResultTable,
    candidate: ResultTable,
    mapping: ColumnMapping,
    cfg: CompareConfig,
) -> bool:
    """Row-coherent strengthening: project the candidate onto the mapped
    columns in truth order, sort both row lists, compare element-wise."""
    if len(mapping.pairs) != truth.column_count:
        raise ValueError("mapping must be total over truth columns")
    projected_cols = [candidate.columns[ci][1] for _, ci in mapping.pairs]
    cand_rows = [
        tuple(col[i] for col in projected_cols) for i in range(candidate.row_count)
    ]
    truth_rows = list(truth.rows())

    def row_key(row):
        return tuple(cell_sort_key(c) for c in row)

    truth_rows.sort(key=row_key)
    cand_rows.sort(key=row_key)
    return all(
        cells_equal(a, b, cfg)
        for t_row, c_row in zip(truth_rows, cand_rows)
        for a, b in zip(t_row, c_row)
    )


def exact_matching_oracle(
    truth: ResultTable, candidate: ResultTable, cfg: CompareConfig
) -> bool:
    """Independent check used to validate the greedy matcher: true iff ANY
    injective assignment of truth columns to candidate columns has all
    signatures equal (augmenting-path bipartite matching)."""
    if truth.column_count > ORACLE_MAX_TRUTH_COLUMNS:
        raise SizeLimitExceeded(
            f"oracle bound is {ORACLE_MAX_TRUTH_COLUMNS} truth columns, got {truth.column_count}"
        )
    if truth.row_count != candidate.row_count:
        raise ValueError("exact_matching_oracle requires equal row counts")

    truth_sigs = [column_signature(cells, cfg) for _, cells in truth.columns]
    cand_sigs = [column_signature(cells, cfg) for _, cells in candidate.columns]
    compat = [
        [ci for ci, csig in enumerate(cand_sigs) if signatures_equal(tsig, csig, cfg)]
        for tsig in truth_sigs
    ]

    matched_to: dict[int, int] = {}  # candidate index -> truth index

    def try_assign(ti: int, visited: set[int]) -> bool:
        for ci in compat[ti]:
            if ci in visited:
                continue
            visited.add(ci)
            if ci not in matched_to or try_assign(matched_to[ci], visited):
                matched_to[ci] = ti
                return True
        return False

    return all(try_assign(ti, set()) for ti in range(truth.column_count))


def compare_tables(
    truth: ResultTable, candidate: ResultTable, cfg: CompareConfig | None = None
) -> CompareVerdict:
    """Full comparison: row-count check, greedy column matching, and (in
    STRICT_ROWS mode) the row-coherence check."""
    cfg = cfg or CompareConfig()
    if truth.row_count != candidate.row_count:
        return RowCountMismatch(truth.row_count, candidate.row_count)
    matched = match_columns_greedy(truth, candidate, cfg)
    if isinstance(matched, UnmatchedColumn):
        return matched
    if cfg.mode is CompareMode.STRICT_ROWS and not strict_row_check(
        truth, candidate, matched, cfg
    ):
        return RowSetMismatch()
    return Correct(matched)
