"""Benchmark a model over a test set and report the three headline metrics.

For each test record the model under test generates SQL from the question
(generation is timed), the SQL is executed, and the result table is compared
against the executed ground-truth result.  Metrics: average generation
duration, success rate (fraction of queries returning any rows), and
accuracy rate (fraction judged correct), kept as exact rationals until
rendering.

The report path emits a markdown or JSON table and, alongside it, a rendered
figure of the per-model rates and durations.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from .compare import CompareConfig, CompareVerdict, compare_tables
from .datagen import extract_sql
from .gateway import ChatClient, ChatRequest, render_prompt
from .model import QuestionRecord, SchemaDescriptor, canonical_json
from .runner import EngineError, ExecutionOutcome, QueryExecutor, Success, Timeout

logger = logging.getLogger(__name__)


class EmptyRecordSet(Exception):
    pass


@dataclass(frozen=True)
class NotEvaluated:
    """Comparison was impossible: the candidate produced no usable result."""

    reason: str

    is_correct = False

    def to_json_obj(self) -> dict:
        return {"verdict": "not_evaluated", "reason": self.reason}


@dataclass(frozen=True)
class BenchRecord:
    record_id: str
    generated_sql: str
    generation_duration: float
    outcome: ExecutionOutcome
    verdict: CompareVerdict | NotEvaluated

    def __post_init__(self):
        if isinstance(self.verdict, NotEvaluated) == self.outcome.has_rows():
            raise ValueError("verdict must be NotEvaluated exactly when no rows came back")

    def to_json_obj(self) -> dict:
        if isinstance(self.outcome, Success):
            outcome = {
                "kind": "success",
                "row_count": self.outcome.table.row_count,
                "column_count": self.outcome.table.column_count,
                "duration": self.outcome.duration,
            }
        elif isinstance(self.outcome, EngineError):
            outcome = {"kind": "engine_error", "message": self.outcome.message,
                       "duration": self.outcome.duration}
        else:
            assert isinstance(self.outcome, Timeout)
            outcome = {"kind": "timeout", "limit": self.outcome.limit}
        return {
            "record_id": self.record_id,
            "generated_sql": self.generated_sql,
            "generation_duration": self.generation_duration,
            "outcome": outcome,
            "verdict": self.verdict.to_json_obj(),
        }


@dataclass(frozen=True)
class Metrics:
    avg_query_duration: float
    success_rate: Fraction
    accuracy_rate: Fraction
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("metrics need at least one record")
        if self.accuracy_rate > self.success_rate:
            raise ValueError("accuracy_rate cannot exceed success_rate")

    def to_json_obj(self) -> dict:
        return {
            "avg_query_duration": self.avg_query_duration,
            "success_rate": float(self.success_rate),
            "accuracy_rate": float(self.accuracy_rate),
            "n": self.n,
        }


class EchoModel:
    """Built-in oracle: answers every question with its ground-truth SQL."""

    def generate(self, record: QuestionRecord) -> str:
        return record.sql


class ChatModel:
    """Adapter putting a chat-completion client under benchmark."""

    def __init__(self, client: ChatClient, schema: SchemaDescriptor, model: str = "gpt-4"):
        self.client = client
        self.schema = schema
        self.model = model

    def generate(self, record: QuestionRecord) -> str:
        prompt = render_prompt(
            "sql_generation",
            {
                "schema": self.schema.render_for_prompt(),
                "dialect": record.dialect.display(),
                "question": record.question,
            },
        )
        response = self.client.complete(ChatRequest.user(self.model, prompt))
        return extract_sql(response.content)


def run_benchmark(
    testset,
    model_client,
    executor: QueryExecutor,
    compare_cfg: CompareConfig | None = None,
    *,
    concurrency: int = 1,
) -> list[BenchRecord]:
    """Benchmark every record; per-record failures become BenchRecords.

    Ground-truth outcomes are cached per unique SQL text; records whose
    ground truth fails to produce rows measure nothing and are excluded with
    a warning (denominator reduced).
    """
    testset = list(testset)
    if not testset:
        raise EmptyRecordSet("test set is empty")
    compare_cfg = compare_cfg or CompareConfig()

    truth_cache: dict[str, ExecutionOutcome] = {}
    for record in testset:
        if record.sql not in truth_cache:
            truth_cache[record.sql] = executor.run(record.sql)

    valid = []
    for record in testset:
        truth = truth_cache[record.sql]
        if truth.has_rows():
            valid.append(record)
        else:
            logger.warning(
                "excluding %s: ground-truth SQL produced no usable result", record.id
            )

    def bench_one(record: QuestionRecord) -> BenchRecord:
        start = time.perf_counter()
        sql = model_client.generate(record)
        gen_duration = time.perf_counter() - start
        outcome = executor.run(sql)
        if outcome.has_rows():
            verdict = compare_tables(truth_cache[record.sql].table, outcome.table, compare_cfg)
        elif isinstance(outcome, EngineError):
            verdict = NotEvaluated(f"engine error: {outcome.message}")
        elif isinstance(outcome, Timeout):
            verdict = NotEvaluated(f"timed out after {outcome.limit}s")
        else:
            verdict = NotEvaluated("query returned no rows")
        return BenchRecord(record.id, sql, gen_duration, outcome, verdict)

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            return list(pool.map(bench_one, valid))
    return [bench_one(record) for record in valid]


def compute_metrics(records) -> Metrics:
    """Rates as exact fractions of the record count; duration as the mean
    generation latency."""
    records = list(records)
    if not records:
        raise EmptyRecordSet("no benchmark records")
    n = len(records)
    successes = sum(1 for r in records if r.outcome.has_rows())
    correct = sum(1 for r in records if r.verdict.is_correct)
    avg = math.fsum(r.generation_duration for r in records) / n
    return Metrics(
        avg_query_duration=avg,
        success_rate=Fraction(successes, n),
        accuracy_rate=Fraction(correct, n),
        n=n,
    )


def _format_rate(rate: Fraction) -> str:
    return f"{float(rate) * 100:.2f}%"


def render_report(entries, fmt: str = "markdown") -> str:
    """Render per-model metrics; ``entries`` is an ordered sequence of
    (model label, Metrics) with unique labels."""
    entries = list(entries)
    if not entries:
        raise ValueError("no metrics to report")
    labels = [label for label, _ in entries]
    if len(set(labels)) != len(labels):
        raise ValueError("model labels must be unique")
    if fmt == "json":
        payload = [
            {"model": label, **metrics.to_json_obj()} for label, metrics in entries
        ]
        return canonical_json(payload)
    if fmt != "markdown":
        raise ValueError(f"unknown report format: {fmt!r}")
    lines = [
        "| Models | Query Duration (Avg.) | Success Rate (%) | Accuracy Rate (%) |",
        "| --- | --- | --- | --- |",
    ]
    for label, metrics in entries:
        lines.append(
            f"| {label} | {metrics.avg_query_duration:.2f}s "
            f"| {_format_rate(metrics.success_rate)} "
            f"| {_format_rate(metrics.accuracy_rate)} |"
        )
    return "\n".join(lines)


def render_figure(entries, path) -> None:
    """Bar charts of rates and generation durations, written to ``path``."""
    entries = list(entries)
    if not entries:
        raise ValueError("no metrics to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [label for label, _ in entries]
    success = [float(m.success_rate) * 100 for _, m in entries]
    accuracy = [float(m.accuracy_rate) * 100 for _, m in entries]
    durations = [m.avg_query_duration for _, m in entries]
    x = range(len(labels))

    fig, (ax_rates, ax_dur) = plt.subplots(
        1, 2, figsize=(max(8, 2.2 * len(labels)), 4)
    )
    width = 0.38
    ax_rates.bar([i - width / 2 for i in x], success, width, label="Success rate")
    ax_rates.bar([i + width / 2 for i in x], accuracy, width, label="Accuracy rate")
    ax_rates.set_ylabel("%")
    ax_rates.set_ylim(0, 105)
    ax_rates.set_xticks(list(x))
    ax_rates.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax_rates.legend(fontsize=8)
    ax_rates.set_title("Execution rates")

    ax_dur.bar(list(x), durations, width=0.5, color="tab:gray")
    ax_dur.set_ylabel("seconds")
    ax_dur.set_xticks(list(x))
    ax_dur.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax_dur.set_title("Avg. generation duration")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_audit(records, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(canonical_json(record.to_json_obj()) + "\n")
