import random
from decimal import Decimal

import pytest

from t2s.compare import (
    ColumnMapping,
    CompareConfig,
    CompareMode,
    Correct,
    RowCountMismatch,
    RowSetMismatch,
    SizeLimitExceeded,
    UnmatchedColumn,
    cells_equal,
    column_signature,
    compare_tables,
    exact_matching_oracle,
    match_columns_greedy,
    strict_row_check,
)
from t2s.model import CellKind, ResultTable, canonicalize_cell

from tablegen import derived_candidate, random_table

EXACT = CompareConfig(numeric_tolerance=0)
LAX = CompareConfig()
STRICT = CompareConfig(mode=CompareMode.STRICT_ROWS)


def table(*cols):
    return ResultTable.from_columns(list(cols))


class TestCompareTables:
    def test_reflexivity_small(self):
        t = table(("a", [1, 3]), ("b", [2, 4]))
        verdict = compare_tables(t, t, EXACT)
        assert isinstance(verdict, Correct)
        assert verdict.mapping.pairs == ((0, 0), (1, 1))

    def test_renamed_reordered_with_extra_column(self):
        truth = table(("A", [1, 2]), ("B", [10, 20]))
        candidate = table(("x", [20, 10]), ("y", [2, 1]), ("z", ["pad", "pad"]))
        # independent oracle agrees an assignment exists
        assert exact_matching_oracle(truth, candidate, EXACT)
        verdict = compare_tables(truth, candidate, EXACT)
        assert isinstance(verdict, Correct)
        assert verdict.mapping.pairs == ((0, 1), (1, 0))

    def test_row_count_checked_first(self):
        truth = table(("a", [1, 2]))
        candidate = table(("a", [1, 2, 3]))
        assert compare_tables(truth, candidate, EXACT) == RowCountMismatch(2, 3)

    def test_zero_row_tables(self):
        truth = table(("a", []), ("b", []))
        wider = table(("x", []), ("y", []), ("z", []))
        narrower = table(("x", []))
        assert compare_tables(truth, wider, EXACT).is_correct
        assert compare_tables(truth, narrower, EXACT) == UnmatchedColumn(1)

    def test_strict_mode_reports_row_set_mismatch(self):
        truth = table(("n", [1, 2]), ("s", ["a", "b"]))
        # per-column multisets equal, rows incoherent
        candidate = table(("n", [1, 2]), ("s", ["b", "a"]))
        assert compare_tables(truth, candidate, LAX).is_correct
        assert compare_tables(
            truth, candidate, CompareConfig(mode=CompareMode.STRICT_ROWS)
        ) == RowSetMismatch()


class TestGreedyMatching:
    def test_zero_truth_columns_vacuous(self):
        truth = table()
        candidate = table(("x", []))
        mapping = match_columns_greedy(truth, candidate, EXACT)
        assert mapping == ColumnMapping(())

    def test_injectivity_forces_failure(self):
        truth = table(("A", [1]), ("B", [1]))
        candidate = table(("x", [1]))
        assert match_columns_greedy(truth, candidate, EXACT) == UnmatchedColumn(1)

    def test_matches_lowest_index_with_equal_signature(self):
        truth = table(("A", [1, 2]))
        candidate = table(("x", [9, 9]), ("y", [2, 1]))
        # signature oracle: y sorted equals the truth column sorted
        assert column_signature(candidate.columns[1][1], EXACT) == column_signature(
            truth.columns[0][1], EXACT
        )
        mapping = match_columns_greedy(truth, candidate, EXACT)
        assert mapping.pairs == ((0, 1),)

    def test_unequal_row_counts_rejected(self):
        with pytest.raises(ValueError):
            match_columns_greedy(table(("a", [1])), table(("b", [1, 2])), EXACT)


class TestColumnSignature:
    def test_sorts_values(self):
        cells = [canonicalize_cell(v) for v in [3, 1, 2]]
        assert [c.value for c in column_signature(cells, EXACT)] == [1, 2, 3]

    def test_nulls_sort_first(self):
        cells = [canonicalize_cell(v) for v in [None, 2, None]]
        sig = column_signature(cells, EXACT)
        assert [c.kind for c in sig] == [CellKind.NULL, CellKind.NULL, CellKind.INT]

    def test_mixed_type_total_order(self):
        from datetime import date, datetime, timezone

        cells = [
            canonicalize_cell(v)
            for v in [
                "text",
                date(2020, 1, 1),
                datetime(2020, 1, 1, tzinfo=timezone.utc),
                True,
                None,
                Decimal("1.5"),
                7,
            ]
        ]
        sig = column_signature(cells, EXACT)
        assert [c.kind for c in sig] == [
            CellKind.NULL, CellKind.BOOL, CellKind.DEC, CellKind.INT,
            CellKind.TEXT, CellKind.DATE, CellKind.TS,
        ]

    def test_tolerant_signature_equality(self):
        a = [canonicalize_cell(Decimal("1.0000001")), canonicalize_cell(1.0)]
        b = [canonicalize_cell(1.0), canonicalize_cell(1.0)]
        cfg = CompareConfig(numeric_tolerance=1e-6)
        # |1.0000001 - 1.0| / 1.0000001 <= 1e-6
        sig_a = column_signature(a, cfg)
        sig_b = column_signature(b, cfg)
        assert all(cells_equal(x, y, cfg) for x, y in zip(sig_a, sig_b))

    def test_exact_mode_distinguishes_close_decimals(self):
        a = canonicalize_cell(Decimal("1.0000001"))
        b = canonicalize_cell(Decimal("1.0000002"))
        assert not cells_equal(a, b, EXACT)
        assert cells_equal(a, b, CompareConfig(numeric_tolerance=1e-6))

    def test_near_zero_absolute_floor(self):
        a = canonicalize_cell(Decimal("0.0000000001"))
        b = canonicalize_cell(Decimal("0.0000000002"))
        # relative test fails near zero; the 1e-9 floor applies under tolerance
        assert cells_equal(a, b, CompareConfig(numeric_tolerance=1e-6))
        assert not cells_equal(a, b, EXACT)


class TestStrictRowCheck:
    def test_single_column_degenerate(self):
        truth = table(("a", [2, 1]))
        candidate = table(("x", [1, 2]))
        mapping = match_columns_greedy(truth, candidate, EXACT)
        assert strict_row_check(truth, candidate, mapping, EXACT)

    def test_row_incoherence_detected(self):
        truth = ResultTable.from_rows(["n", "s"], [(1, "a"), (2, "b")])
        candidate = ResultTable.from_rows(["n", "s"], [(1, "b"), (2, "a")])
        mapping = match_columns_greedy(truth, candidate, EXACT)
        assert not isinstance(mapping, UnmatchedColumn)
        assert not strict_row_check(truth, candidate, mapping, EXACT)

    def test_row_permutation_invariance(self):
        truth = ResultTable.from_rows(["n", "s"], [(1, "a"), (2, "b"), (3, "c")])
        candidate = ResultTable.from_rows(["n", "s"], [(3, "c"), (1, "a"), (2, "b")])
        mapping = match_columns_greedy(truth, candidate, EXACT)
        assert strict_row_check(truth, candidate, mapping, EXACT)


class TestExactMatchingOracle:
    def test_greedy_success_is_witness(self):
        rng = random.Random(5)
        for _ in range(50):
            truth = random_table(rng, max_cols=4, max_rows=6)
            candidate = derived_candidate(rng, truth, extra_cols=1)
            mapping = match_columns_greedy(truth, candidate, EXACT)
            assert not isinstance(mapping, UnmatchedColumn)
            assert exact_matching_oracle(truth, candidate, EXACT)

    def test_swapped_assignment_found(self):
        truth = table(("A", [1]), ("B", [2]))
        candidate = table(("x", [2]), ("y", [1]))
        assert exact_matching_oracle(truth, candidate, EXACT)

    def test_no_assignment(self):
        assert not exact_matching_oracle(table(("A", [1])), table(("x", [2])), EXACT)

    def test_size_limit(self):
        wide = table(*[(f"c{i}", [1]) for i in range(9)])
        with pytest.raises(SizeLimitExceeded):
            exact_matching_oracle(wide, wide, EXACT)


class TestToleranceIntransitivity:
    """With a relative tolerance, 'equal' is not transitive: greedy can consume
    the only candidate that another truth column needed, while the oracle
    still finds a full assignment."""

    def _tables(self):
        truth = table(
            ("A", [Decimal("1.5")]),
            ("B", [Decimal("1.5000018")]),
        )
        candidate = table(
            ("x", [Decimal("1.5000009")]),
            ("y", [Decimal("1.4999991")]),
        )
        return truth, candidate

    def test_greedy_fails_but_oracle_succeeds(self):
        cfg = CompareConfig(numeric_tolerance=1e-6)
        truth, candidate = self._tables()
        # A is within tolerance of both x and y; B only of x.
        a, b = truth.columns[0][1][0], truth.columns[1][1][0]
        x, y = candidate.columns[0][1][0], candidate.columns[1][1][0]
        assert cells_equal(a, x, cfg) and cells_equal(a, y, cfg)
        assert cells_equal(b, x, cfg) and not cells_equal(b, y, cfg)

        assert match_columns_greedy(truth, candidate, cfg) == UnmatchedColumn(1)
        assert exact_matching_oracle(truth, candidate, cfg)

    def test_soundness_direction_on_random_tables(self):
        cfg = CompareConfig(numeric_tolerance=1e-6)
        rng = random.Random(17)
        for _ in range(200):
            truth = random_table(rng, max_cols=4, max_rows=8)
            candidate = derived_candidate(rng, truth, extra_cols=rng.randint(0, 2))
            mapping = match_columns_greedy(truth, candidate, cfg)
            if not isinstance(mapping, UnmatchedColumn):
                assert exact_matching_oracle(truth, candidate, cfg)


class TestInvariants:
    def test_reflexivity_random(self):
        rng = random.Random(23)
        for _ in range(100):
            t = random_table(rng)
            assert compare_tables(t, t, EXACT).is_correct
            assert compare_tables(t, t, STRICT).is_correct

    def test_candidate_permutation_invariance(self):
        rng = random.Random(29)
        for _ in range(100):
            truth = random_table(rng)
            candidate = (
                derived_candidate(rng, truth, extra_cols=rng.randint(0, 2))
                if rng.random() < 0.5
                else random_table(rng, n_rows=truth.row_count)
            )
            before = compare_tables(truth, candidate, EXACT)
            shuffled = derived_candidate(rng, candidate, per_column_shuffle=True)
            after = compare_tables(truth, shuffled, EXACT)
            assert type(before) is type(after)
            if not isinstance(before, Correct):
                assert before == after

    def test_column_addition_monotonicity(self):
        rng = random.Random(31)
        for _ in range(100):
            truth = random_table(rng)
            candidate = derived_candidate(rng, truth)
            assert compare_tables(truth, candidate, EXACT).is_correct
            widened = derived_candidate(rng, truth, extra_cols=rng.randint(1, 3))
            assert compare_tables(truth, widened, EXACT).is_correct

    def test_strict_implies_lax(self):
        rng = random.Random(37)
        strict_cfg = CompareConfig(numeric_tolerance=0, mode=CompareMode.STRICT_ROWS)
        lax_cfg = CompareConfig(numeric_tolerance=0)
        for _ in range(150):
            truth = random_table(rng)
            candidate = (
                derived_candidate(rng, truth)
                if rng.random() < 0.6
                else random_table(rng, n_rows=truth.row_count)
            )
            if compare_tables(truth, candidate, strict_cfg).is_correct:
                assert compare_tables(truth, candidate, lax_cfg).is_correct


def test_mapping_validation():
    with pytest.raises(ValueError):
        ColumnMapping(((0, 0), (1, 0)))  # not injective
    with pytest.raises(ValueError):
        ColumnMapping(((1, 0),))  # does not start at truth column 0


def test_negative_tolerance_rejected():
    with pytest.raises(ValueError):
        CompareConfig(numeric_tolerance=-1)


def test_verdict_json_shapes():
    assert RowCountMismatch(2, 3).to_json_obj() == {
        "verdict": "row_count_mismatch", "truth_rows": 2, "candidate_rows": 3,
    }
    assert UnmatchedColumn(1).to_json_obj()["truth_column_index"] == 1
    assert RowSetMismatch().to_json_obj() == {"verdict": "row_set_mismatch"}
    correct = compare_tables(table(("a", [1])), table(("a", [1])), EXACT)
    assert correct.to_json_obj() == {"verdict": "correct", "column_mapping": [[0, 0]]}
