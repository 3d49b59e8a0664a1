import json
import logging
from fractions import Fraction

import pytest

from t2s.benchmark import (
    BenchRecord,
    ChatModel,
    EchoModel,
    EmptyRecordSet,
    Metrics,
    NotEvaluated,
    compute_metrics,
    render_figure,
    render_report,
    run_benchmark,
    write_audit,
)
from t2s.compare import ColumnMapping, Correct, UnmatchedColumn
from t2s.gateway import ChatClient, ScriptedTransport
from t2s.model import DialectTag, QuestionRecord, ResultTable
from t2s.runner import EngineError, Success


def record(qid, sql, question="how many?"):
    return QuestionRecord(
        id=qid, base_id=qid, topic="t", question=question, rewrite_index=0,
        sql=sql, dialect=DialectTag.GENERIC, schema_id="retail_base",
    )


COUNTRY_SQL = (
    "SELECT country, COUNT(*) AS customer_count FROM customers "
    "GROUP BY country ORDER BY customer_count DESC, country"
)
CITY_SQL = (
    "SELECT city, COUNT(*) AS n FROM customers GROUP BY city ORDER BY n DESC, city"
)

TESTSET = [
    record("b1", COUNTRY_SQL),
    record("b2", CITY_SQL),
    record("b3", "SELECT status, COUNT(*) AS n FROM orders GROUP BY status"),
]


def one_row_success():
    table = ResultTable.from_rows(["a"], [(1,)])
    return Success(table, 0.01)


def fake_record(qid, *, success=True, correct=True, duration=1.0):
    if not success:
        return BenchRecord(qid, "SELEC", duration, EngineError("syntax", 0.0),
                           NotEvaluated("engine error: syntax"))
    verdict = Correct(ColumnMapping(((0, 0),))) if correct else UnmatchedColumn(0)
    return BenchRecord(qid, "SELECT 1", duration, one_row_success(), verdict)


class TestComputeMetrics:
    def test_five_records_four_success_three_correct(self):
        records = [
            fake_record("r1", correct=True),
            fake_record("r2", correct=True),
            fake_record("r3", correct=True),
            fake_record("r4", correct=False),
            fake_record("r5", success=False),
        ]
        metrics = compute_metrics(records)
        assert metrics.success_rate == Fraction(4, 5)
        assert metrics.accuracy_rate == Fraction(3, 5)
        assert metrics.n == 5

    def test_all_correct(self):
        metrics = compute_metrics([fake_record(f"r{i}") for i in range(4)])
        assert metrics.success_rate == metrics.accuracy_rate == Fraction(1)

    def test_duration_is_mean_generation_latency(self):
        records = [fake_record("a", duration=1.0), fake_record("b", duration=3.0)]
        assert compute_metrics(records).avg_query_duration == pytest.approx(2.0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyRecordSet):
            compute_metrics([])

    def test_accuracy_never_exceeds_success(self):
        with pytest.raises(ValueError):
            Metrics(1.0, Fraction(1, 2), Fraction(3, 4), 4)

    def test_published_rates_satisfy_invariant(self):
        # shape of the reported numbers: accuracy 45.64% vs success 87.36%
        metrics = Metrics(47.44, Fraction(8736, 10000), Fraction(4564, 10000), 10000)
        assert metrics.accuracy_rate <= metrics.success_rate


class TestBenchRecordInvariant:
    def test_verdict_required_iff_rows(self):
        with pytest.raises(ValueError):
            BenchRecord("x", "SELECT 1", 0.1, one_row_success(), NotEvaluated("no"))
        with pytest.raises(ValueError):
            BenchRecord("x", "SELEC", 0.1, EngineError("m", 0.0),
                        Correct(ColumnMapping(())))


class TestRunBenchmark:
    def test_echo_model_all_correct(self, executor):
        records = run_benchmark(TESTSET, EchoModel(), executor)
        assert len(records) == len(TESTSET)
        assert all(r.verdict.is_correct for r in records)
        metrics = compute_metrics(records)
        assert metrics.success_rate == metrics.accuracy_rate == Fraction(1)

    def test_broken_model_not_evaluated(self, executor):
        class Broken:
            def generate(self, record):
                return "SELEC 1"

        records = run_benchmark(TESTSET, Broken(), executor)
        assert all(isinstance(r.outcome, EngineError) for r in records)
        assert all(isinstance(r.verdict, NotEvaluated) for r in records)
        metrics = compute_metrics(records)
        assert metrics.success_rate == 0

    def test_renamed_reordered_equivalent_is_correct(self, executor):
        # alias every column and reverse the ordering: still Correct
        class Aliasing:
            def generate(self, record):
                return (
                    "WITH base AS (" + record.sql + ") "
                    "SELECT customer_count AS k, country AS c FROM base ORDER BY k ASC"
                )

        records = run_benchmark([record("b1", COUNTRY_SQL)], Aliasing(), executor)
        assert records[0].verdict.is_correct

    def test_ground_truth_failure_excluded_with_warning(self, executor, caplog):
        testset = TESTSET + [record("bad", "SELECT * FROM nope")]
        with caplog.at_level(logging.WARNING):
            records = run_benchmark(testset, EchoModel(), executor)
        assert len(records) == len(TESTSET)
        assert any("bad" in message for message in caplog.messages)

    def test_empty_testset_rejected(self, executor):
        with pytest.raises(EmptyRecordSet):
            run_benchmark([], EchoModel(), executor)

    def test_concurrent_matches_serial(self, executor):
        serial = run_benchmark(TESTSET, EchoModel(), executor)
        concurrent = run_benchmark(TESTSET, EchoModel(), executor, concurrency=3)
        assert [r.record_id for r in concurrent] == [r.record_id for r in serial]
        assert all(r.verdict.is_correct for r in concurrent)

    def test_chat_model_adapter(self, executor, base_fixture):
        schema = base_fixture.schema_descriptor(DialectTag.GENERIC)
        client = ChatClient(ScriptedTransport([f"```sql\n{COUNTRY_SQL}\n```"]))
        model = ChatModel(client, schema)
        records = run_benchmark([record("b1", COUNTRY_SQL)], model, executor)
        assert records[0].verdict.is_correct
        assert records[0].generated_sql == COUNTRY_SQL


class TestRenderReport:
    def entry(self):
        return ("m (generic SQL)", Metrics(12.3456, Fraction(9, 10), Fraction(8, 10), 10))

    def test_markdown_formatting(self):
        report = render_report([self.entry()])
        assert "| Models | Query Duration (Avg.) | Success Rate (%) | Accuracy Rate (%) |" in report
        assert "| m (generic SQL) | 12.35s | 90.00% | 80.00% |" in report

    def test_json_format(self):
        payload = json.loads(render_report([self.entry()], "json"))
        assert payload[0]["model"] == "m (generic SQL)"
        assert payload[0]["success_rate"] == pytest.approx(0.9)
        assert payload[0]["accuracy_rate"] == pytest.approx(0.8)
        assert payload[0]["n"] == 10

    def test_empty_is_usage_error(self):
        with pytest.raises(ValueError):
            render_report([])

    def test_duplicate_model_names_rejected(self):
        with pytest.raises(ValueError):
            render_report([self.entry(), self.entry()])

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            render_report([self.entry()], "csv")


def test_render_figure_writes_png(tmp_path):
    entries = [
        ("model-a", Metrics(5.0, Fraction(98, 100), Fraction(81, 100), 100)),
        ("model-b", Metrics(47.4, Fraction(87, 100), Fraction(45, 100), 100)),
    ]
    path = tmp_path / "report.png"
    render_figure(entries, path)
    blob = path.read_bytes()
    assert blob[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(blob) > 1000


def test_audit_jsonl(tmp_path):
    records = [fake_record("r1"), fake_record("r2", success=False)]
    path = tmp_path / "audit.jsonl"
    write_audit(records, path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert lines[0]["record_id"] == "r1"
    assert lines[0]["outcome"]["kind"] == "success"
    assert lines[1]["outcome"]["kind"] == "engine_error"
    assert lines[1]["verdict"]["verdict"] == "not_evaluated"
