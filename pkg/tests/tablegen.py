"""Seeded random-table builders shared by the compare tests."""

from __future__ import annotations

import random
import string
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal

from t2s.model import ResultTable

_TEXT_POOL = ["alpha", "beta", "gamma", "delta", "x", "", "  pad", "Omega"]


def random_cell(rng: random.Random):
    kind = rng.randrange(7)
    if kind == 0:
        return None
    if kind == 1:
        return rng.randint(-9, 9)
    if kind == 2:
        return Decimal(f"{rng.randint(-99, 99)}.{rng.randint(1, 9)}")
    if kind == 3:
        return rng.choice(_TEXT_POOL)
    if kind == 4:
        return rng.random() < 0.5
    if kind == 5:
        return date(2020, 1, 1) + timedelta(days=rng.randint(0, 30))
    return datetime(2020, 1, 1, tzinfo=timezone.utc) + timedelta(hours=rng.randint(0, 48))


def random_table(rng: random.Random, max_cols: int = 6, max_rows: int = 20,
                 n_cols: int | None = None, n_rows: int | None = None) -> ResultTable:
    n_cols = n_cols if n_cols is not None else rng.randint(0, max_cols)
    n_rows = n_rows if n_rows is not None else rng.randint(0, max_rows)
    if n_cols == 0:
        # from_columns cannot carry a row count without columns
        return ResultTable((), n_rows)
    return ResultTable.from_columns(
        [
            (f"c{i}", [random_cell(rng) for _ in range(n_rows)])
            for i in range(n_cols)
        ]
    )


def _fresh_names(rng: random.Random, n: int) -> list[str]:
    return ["".join(rng.choices(string.ascii_lowercase, k=4)) for _ in range(n)]


def derived_candidate(
    rng: random.Random,
    truth: ResultTable,
    extra_cols: int = 0,
    per_column_shuffle: bool = False,
) -> ResultTable:
    """A candidate equivalent to ``truth``: rows permuted (whole rows, or each
    column independently), columns shuffled and renamed, optional extras."""
    cols = [list(cells) for _, cells in truth.columns]
    if per_column_shuffle:
        for cells in cols:
            rng.shuffle(cells)
    else:
        order = list(range(truth.row_count))
        rng.shuffle(order)
        cols = [[cells[i] for i in order] for cells in cols]
    for _ in range(extra_cols):
        position = rng.randint(0, len(cols))
        cols.insert(position, [random_cell(rng) for _ in range(truth.row_count)])
    col_order = list(range(len(cols)))
    rng.shuffle(col_order)
    cols = [cols[i] for i in col_order]
    if not cols:
        return ResultTable((), truth.row_count)
    names = _fresh_names(rng, len(cols))
    return ResultTable.from_columns(list(zip(names, cols)))


def mutated_candidate(rng: random.Random, candidate: ResultTable) -> ResultTable:
    """Flip one cell to a fresh random value (retrying until it differs)."""
    if candidate.column_count == 0 or candidate.row_count == 0:
        return candidate
    cols = [list(cells) for _, cells in candidate.columns]
    ci = rng.randrange(len(cols))
    ri = rng.randrange(candidate.row_count)
    old = cols[ci][ri]
    for _ in range(20):
        new = random_cell(rng)
        cols[ci][ri] = new
        fresh = ResultTable.from_columns(
            [(name, cols[i]) for i, (name, _) in enumerate(candidate.columns)]
        )
        if fresh.columns[ci][1][ri] != old:
            return fresh
    return candidate


def random_pair(rng: random.Random, tolerance_heavy: bool = False):
    """A (truth, candidate) pair mixing equivalent, near-miss, and unrelated
    candidates; row counts always agree so column matching is exercised."""
    truth = random_table(rng, max_cols=6, max_rows=20)
    style = rng.randrange(3)
    if style == 0:
        candidate = derived_candidate(
            rng, truth, extra_cols=rng.randint(0, 2),
            per_column_shuffle=rng.random() < 0.5,
        )
    elif style == 1:
        candidate = mutated_candidate(
            rng, derived_candidate(rng, truth, extra_cols=rng.randint(0, 2))
        )
    else:
        candidate = random_table(
            rng, n_cols=rng.randint(0, 8), n_rows=truth.row_count
        )
    return truth, candidate
