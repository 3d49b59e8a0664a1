"""End-to-end synthetic dataset pipeline.

Stages, in order: expand seed topics to a target count, generate questions
per topic, generate SQL per question, execute with a bounded self-healing
loop, judge result plausibility, deduplicate question/SQL pairs, paraphrase
the survivors into families, and split families into train/test.

Every dropped item is logged with its stage and reason; under a replay
transport with a fixed seed, the whole run is byte-deterministic.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .gateway import CassetteMiss, ChatClient, ChatRequest, TransportError, render_prompt
from .model import DialectTag, QuestionRecord, SchemaDescriptor, Split, canonical_json
from .runner import EngineError, ExecutionOutcome, QueryExecutor, Timeout, preview

# Generation stages want variety; judging and SQL writing want stability.
CREATIVE_TEMPERATURE = 0.7
DETERMINISTIC_TEMPERATURE = 0.0

# Post-hoc repetition guard on generated questions (token-set similarity).
REPETITION_JACCARD = 0.9

TOPIC_CALL_BUDGET = 8

# Manifest timestamp used under deterministic transports so replayed runs are
# byte-identical.
FIXED_TIMESTAMP = "1970-01-01T00:00:00Z"

DEFAULT_SEED_TOPICS = (
    "Customer demographics",
    "Order seasonality",
    "Product profitability",
    "Customer purchasing behavior",
    "Order fulfillment and cancellations",
)

_FENCE = re.compile(r"```[a-zA-Z]*\s*\n(.*?)```", re.DOTALL)
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


class GenerationExhausted(Exception):
    """The client could not reach the requested count within the call budget."""


class EmptyCompletion(Exception):
    """The model returned no usable text."""


class PipelineError(Exception):
    """Pipeline abort, tagged with the stage that failed."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        self.message = message
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True)
class PipelineConfig:
    seed_topics: tuple[str, ...] = DEFAULT_SEED_TOPICS
    # 90 covers the shared themes; configure 100 when the extended fixture's
    # seller/payment tables warrant the extra ten.
    target_topic_count: int = 90
    max_questions_per_topic: int = 10
    max_heal_attempts: int = 5
    max_rewrites: int = 4
    split_ratio: float = 0.8
    rng_seed: int = 0
    dialects: tuple[DialectTag, ...] = (DialectTag.GENERIC,)
    model: str = "gpt-4"
    topic_concurrency: int = 1

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.max_heal_attempts < 1:
            raise ValueError("max_heal_attempts must be >= 1")
        if not 0 <= self.max_rewrites <= 4:
            # a family is one original plus at most four rewrites
            raise ValueError("max_rewrites must be between 0 and 4")
        if self.topic_concurrency < 1:
            raise ValueError("topic_concurrency must be >= 1")

    def to_json_obj(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["seed_topics"] = list(self.seed_topics)
        obj["dialects"] = [d.value for d in self.dialects]
        return obj

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json_obj()).encode()).hexdigest()


@dataclass
class PipelineStats:
    """Per-stage counters.

    ``dropped_by_filter`` counts plausibility-judge drops and duplicate-pair
    drops (the dedup stage is a filter too; the stage log tells them apart),
    so that every generated question lands in exactly one of
    ``dropped_unhealed`` / ``dropped_by_filter`` / ``unique_pairs``.
    """

    topics_generated: int = 0
    questions_generated: int = 0
    sql_generated: int = 0
    healed: int = 0
    dropped_unhealed: int = 0
    dropped_by_filter: int = 0
    rewrites_generated: int = 0
    unique_pairs: int = 0
    total_pairs: int = 0
    train_count: int = 0
    test_count: int = 0

    def verify(self) -> None:
        if self.total_pairs != self.unique_pairs + self.rewrites_generated:
            raise AssertionError("total_pairs != unique_pairs + rewrites_generated")
        if self.train_count + self.test_count != self.total_pairs:
            raise AssertionError("train_count + test_count != total_pairs")
        if (
            self.questions_generated
            != self.dropped_unhealed + self.dropped_by_filter + self.unique_pairs
        ):
            raise AssertionError("question counts are not conserved across stages")

    def to_json_obj(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DatasetManifest:
    config_hash: str
    stats: PipelineStats
    records_path: str
    stage_log_path: str
    created: str
    cassette: str | None
    status: str = "complete"
    failed_stage: str | None = None

    def to_json_obj(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "stats": self.stats.to_json_obj(),
            "records_path": self.records_path,
            "stage_log_path": self.stage_log_path,
            "created": self.created,
            "cassette": self.cassette,
            "status": self.status,
            "failed_stage": self.failed_stage,
        }


@dataclass(frozen=True)
class Healed:
    sql: str
    attempts_used: int


@dataclass(frozen=True)
class Dropped:
    last_failure: str


@dataclass(frozen=True)
class Keep:
    pass


@dataclass(frozen=True)
class Drop:
    reason: str


def _clean_lines(text: str) -> list[str]:
    lines = []
    for raw in text.splitlines():
        line = _BULLET.sub("", raw).strip()
        if line:
            lines.append(line)
    return lines


def _token_set(text: str) -> frozenset[str]:
    return frozenset(re.findall(r"[a-z0-9]+", text.lower()))


def jaccard_similarity(a: str, b: str) -> float:
    ta, tb = _token_set(a), _token_set(b)
    union = ta | tb
    if not union:
        return 1.0
    return len(ta & tb) / len(union)


def _normalize_text(text: str) -> str:
    return " ".join(text.split()).lower()


def _normalize_sql(sql: str) -> str:
    return " ".join(sql.split()).lower().rstrip(";")


def extract_sql(content: str) -> str:
    """SQL text from a completion: fenced block when present, else the whole
    content, trimmed."""
    match = _FENCE.search(content)
    text = match.group(1) if match else content
    return text.strip()


def expand_topics(
    seed_topics,
    target_count: int,
    client: ChatClient,
    schema: SchemaDescriptor,
    *,
    model: str = "gpt-4",
    max_calls: int = TOPIC_CALL_BUDGET,
) -> list[str]:
    """Seed topics plus generated ones, deduplicated case-insensitively and
    truncated to ``target_count``."""
    if not seed_topics:
        raise ValueError("seed_topics must be non-empty")
    topics: list[str] = []
    seen: set[str] = set()
    for topic in seed_topics:
        key = topic.strip().lower()
        if key and key not in seen:
            seen.add(key)
            topics.append(topic.strip())
    if len(topics) >= target_count:
        return topics[:target_count]

    for _ in range(max_calls):
        prompt = render_prompt(
            "topic_expansion",
            {
                "schema": schema.render_for_prompt(),
                "existing_topics": "\n".join(f"- {t}" for t in topics),
                "count": str(target_count - len(topics)),
            },
        )
        response = client.complete(
            ChatRequest.user(model, prompt, temperature=CREATIVE_TEMPERATURE)
        )
        for line in _clean_lines(response.content):
            key = line.lower()
            if key not in seen:
                seen.add(key)
                topics.append(line)
                if len(topics) == target_count:
                    return topics
    raise GenerationExhausted(
        f"needed {target_count} topics, reached {len(topics)} after {max_calls} calls"
    )


def generate_questions(
    topic: str,
    schema: SchemaDescriptor,
    client: ChatClient,
    max_n: int,
    *,
    model: str = "gpt-4",
) -> list[str]:
    """Up to ``max_n`` questions for one topic; the model may stop early with
    a STOP line, and a token-set similarity guard drops near-duplicates."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    prompt = render_prompt(
        "question_generation",
        {
            "schema": schema.render_for_prompt(),
            "dialect": schema.dialect.display(),
            "topic": topic,
            "max_questions": str(max_n),
        },
    )
    response = client.complete(
        ChatRequest.user(model, prompt, temperature=CREATIVE_TEMPERATURE)
    )
    accepted: list[str] = []
    for line in _clean_lines(response.content):
        if line.strip().upper() == "STOP":
            break
        if any(jaccard_similarity(line, prior) > REPETITION_JACCARD for prior in accepted):
            continue
        accepted.append(line)
        if len(accepted) == max_n:
            break
    return accepted


def generate_sql(
    question: str,
    schema: SchemaDescriptor,
    dialect: DialectTag,
    client: ChatClient,
    *,
    model: str = "gpt-4",
) -> str:
    prompt = render_prompt(
        "sql_generation",
        {
            "schema": schema.render_for_prompt(),
            "dialect": dialect.display(),
            "question": question,
        },
    )
    response = client.complete(
        ChatRequest.user(model, prompt, temperature=DETERMINISTIC_TEMPERATURE)
    )
    sql = extract_sql(response.content)
    if not sql:
        raise EmptyCompletion("model returned no SQL")
    return sql


def _describe_failure(outcome: ExecutionOutcome) -> str:
    if isinstance(outcome, EngineError):
        return outcome.message
    if isinstance(outcome, Timeout):
        return f"query timed out after {outcome.limit}s"
    return "query returned no rows"


def heal_query(
    question: str,
    sql: str,
    executor: QueryExecutor,
    client: ChatClient,
    max_attempts: int,
    *,
    schema: SchemaDescriptor,
    dialect: DialectTag,
    model: str = "gpt-4",
) -> Healed | Dropped:
    """Execute, then repair on error or empty result, re-prompting with the
    failure; at most ``max_attempts`` repair rounds (so up to
    ``max_attempts + 1`` executions).  attempts_used = 0 means the original
    SQL ran untouched."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    current = sql
    outcome = executor.run(current)
    if outcome.has_rows():
        return Healed(current, 0)
    for round_no in range(1, max_attempts + 1):
        prompt = render_prompt(
            "sql_repair",
            {
                "schema": schema.render_for_prompt(),
                "dialect": dialect.display(),
                "question": question,
                "sql": current,
                "error": _describe_failure(outcome),
            },
        )
        response = client.complete(
            ChatRequest.user(model, prompt, temperature=DETERMINISTIC_TEMPERATURE)
        )
        current = extract_sql(response.content)
        outcome = executor.run(current)
        if outcome.has_rows():
            return Healed(current, round_no)
    return Dropped(_describe_failure(outcome))


def plausibility_filter(
    question: str,
    result_preview,
    client: ChatClient,
    *,
    model: str = "gpt-4",
) -> Keep | Drop:
    """Model-judged check that the result shape aligns with the question.

    The verdict token is parsed strictly; a malformed reply is retried once,
    then treated as Drop (fail closed)."""
    prompt = render_prompt(
        "result_filter",
        {"question": question, "preview": result_preview.render()},
    )
    for _ in range(2):
        response = client.complete(
            ChatRequest.user(model, prompt, temperature=DETERMINISTIC_TEMPERATURE)
        )
        lines = [l.strip() for l in response.content.splitlines() if l.strip()]
        first = lines[0] if lines else ""
        if first == "KEEP":
            return Keep()
        match = re.match(r"^DROP(?:\s*:\s*(.*))?$", first)
        if match:
            return Drop(match.group(1) or "judge dropped")
    return Drop("unparseable judge response")


def paraphrase(
    question: str,
    client: ChatClient,
    max_rewrites: int,
    *,
    model: str = "gpt-4",
) -> list[str]:
    """Up to ``max_rewrites`` rewordings; rewrites equal (case/whitespace
    normalized) to the original or to each other are dropped."""
    if max_rewrites < 0:
        raise ValueError("max_rewrites must be >= 0")
    if max_rewrites == 0:
        return []
    prompt = render_prompt(
        "paraphrase",
        {"question": question, "max_rewrites": str(max_rewrites)},
    )
    response = client.complete(
        ChatRequest.user(model, prompt, temperature=CREATIVE_TEMPERATURE)
    )
    seen = {_normalize_text(question)}
    rewrites: list[str] = []
    for line in _clean_lines(response.content):
        norm = _normalize_text(line)
        if norm in seen:
            continue
        seen.add(norm)
        rewrites.append(line)
        if len(rewrites) == max_rewrites:
            break
    return rewrites


def split_dataset(records, ratio: float, rng_seed: int) -> list[QuestionRecord]:
    """Assign train/test at base-question family granularity, so paraphrases
    never straddle the split; train family count = round(ratio * families)."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    records = list(records)
    if any(r.split is not Split.UNASSIGNED for r in records):
        raise ValueError("records must be Unassigned before splitting")
    families = list(dict.fromkeys(r.base_id for r in records))
    shuffled = families[:]
    random.Random(rng_seed).shuffle(shuffled)
    train_n = round(ratio * len(families))
    train_ids = set(shuffled[:train_n])
    return [
        dataclasses.replace(
            r, split=Split.TRAIN if r.base_id in train_ids else Split.TEST
        )
        for r in records
    ]


def save_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(canonical_json(record.to_json_obj()) + "\n")


def load_records(path) -> list[QuestionRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(QuestionRecord.from_json_obj(json.loads(line)))
    return records


@dataclass
class _TopicResult:
    logs: list[dict] = field(default_factory=list)
    candidates: list[tuple[str, str, str]] = field(default_factory=list)  # (lineage, question, sql)
    questions: int = 0
    sql_generated: int = 0
    healed: int = 0
    dropped_unhealed: int = 0
    dropped_by_filter: int = 0


def _process_topic(
    topic_index: int,
    topic: str,
    config: PipelineConfig,
    schema: SchemaDescriptor,
    executor: QueryExecutor,
    client: ChatClient,
    dialect: DialectTag,
) -> _TopicResult:
    out = _TopicResult()

    def log(stage: str, record_id: str, action: str, reason: str = "") -> None:
        out.logs.append(
            {"stage": stage, "record": record_id, "action": action, "reason": reason}
        )

    try:
        questions = generate_questions(
            topic, schema, client, config.max_questions_per_topic, model=config.model
        )
    except (TransportError, CassetteMiss) as exc:
        raise PipelineError("questions", str(exc)) from exc
    out.questions = len(questions)
    for qi, question in enumerate(questions):
        lineage = f"t{topic_index:03d}-q{qi:02d}"
        log("question", lineage, "accept", topic)
        try:
            sql = generate_sql(question, schema, dialect, client, model=config.model)
        except EmptyCompletion as exc:
            out.dropped_unhealed += 1
            log("sql", lineage, "drop", str(exc))
            continue
        except (TransportError, CassetteMiss) as exc:
            raise PipelineError("sql", str(exc)) from exc
        out.sql_generated += 1
        log("sql", lineage, "accept")

        try:
            healed = heal_query(
                question,
                sql,
                executor,
                client,
                config.max_heal_attempts,
                schema=schema,
                dialect=dialect,
                model=config.model,
            )
        except (TransportError, CassetteMiss) as exc:
            raise PipelineError("heal", str(exc)) from exc
        if isinstance(healed, Dropped):
            out.dropped_unhealed += 1
            log("heal", lineage, "drop", healed.last_failure)
            continue
        if healed.attempts_used > 0:
            out.healed += 1
        log("heal", lineage, "accept", f"repair_rounds={healed.attempts_used}")

        outcome = executor.run(healed.sql)
        if not outcome.has_rows():
            # The fixture is static, so a re-execution that stops returning
            # rows indicates a non-deterministic query; treat as unhealed.
            out.dropped_unhealed += 1
            log("heal", lineage, "drop", "result not reproducible")
            continue
        try:
            verdict = plausibility_filter(
                question, preview(outcome.table), client, model=config.model
            )
        except (TransportError, CassetteMiss) as exc:
            raise PipelineError("filter", str(exc)) from exc
        if isinstance(verdict, Drop):
            out.dropped_by_filter += 1
            log("filter", lineage, "drop", verdict.reason)
            continue
        log("filter", lineage, "accept")
        out.candidates.append((lineage, question, healed.sql))
    return out


def run_pipeline(
    config: PipelineConfig,
    schema: SchemaDescriptor,
    executor: QueryExecutor,
    client: ChatClient,
    output_dir,
    *,
    cassette_ref: str | None = None,
    now: str | None = None,
) -> DatasetManifest:
    """Run every stage in order and write records.jsonl, stage_log.jsonl, and
    manifest.json under ``output_dir``.

    Aborts with a stage-tagged :class:`PipelineError` on transport
    exhaustion; partial outputs are still written, with a failed marker in
    the manifest."""
    if not config.seed_topics:
        raise PipelineError("config", "seed_topics must be non-empty")
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if now is None:
        now = (
            FIXED_TIMESTAMP
            if client.deterministic
            else datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        )

    stats = PipelineStats()
    logs: list[dict] = []
    records: list[QuestionRecord] = []
    dialect = config.dialects[0]

    def fail(stage: str, exc: Exception) -> PipelineError:
        manifest = _write_outputs(
            out_dir, config, stats, logs, records, now, cassette_ref,
            status="failed", failed_stage=stage,
        )
        message = exc.message if isinstance(exc, PipelineError) else str(exc)
        error = PipelineError(stage, message)
        error.manifest = manifest
        return error

    try:
        topics = expand_topics(
            config.seed_topics, config.target_topic_count, client, schema,
            model=config.model,
        )
    except (TransportError, CassetteMiss, GenerationExhausted) as exc:
        raise fail("topics", exc) from exc
    stats.topics_generated = len(topics)

    try:
        if config.topic_concurrency > 1:
            with ThreadPoolExecutor(max_workers=config.topic_concurrency) as pool:
                results = list(
                    pool.map(
                        lambda pair: _process_topic(
                            pair[0], pair[1], config, schema, executor, client, dialect
                        ),
                        enumerate(topics),
                    )
                )
        else:
            results = [
                _process_topic(ti, topic, config, schema, executor, client, dialect)
                for ti, topic in enumerate(topics)
            ]
    except PipelineError as exc:
        raise fail(exc.stage, exc) from exc

    candidates: list[tuple[str, str, str]] = []
    for result in results:
        logs.extend(result.logs)
        stats.questions_generated += result.questions
        stats.sql_generated += result.sql_generated
        stats.healed += result.healed
        stats.dropped_unhealed += result.dropped_unhealed
        stats.dropped_by_filter += result.dropped_by_filter
        candidates.extend(result.candidates)

    # Dedup on normalized question + SQL text; duplicates count as filter
    # drops so question accounting stays conserved.
    unique: list[tuple[str, str, str]] = []
    seen_pairs: set[tuple[str, str]] = set()
    for lineage, question, sql in candidates:
        key = (_normalize_text(question), _normalize_sql(sql))
        if key in seen_pairs:
            stats.dropped_by_filter += 1
            logs.append(
                {"stage": "dedup", "record": lineage, "action": "drop", "reason": "duplicate pair"}
            )
            continue
        seen_pairs.add(key)
        logs.append({"stage": "dedup", "record": lineage, "action": "accept", "reason": ""})
        unique.append((lineage, question, sql))
    stats.unique_pairs = len(unique)

    lineage_to_topic = {}
    for result in results:
        for entry in result.logs:
            if entry["stage"] == "question":
                lineage_to_topic[entry["record"]] = entry["reason"]

    try:
        for lineage, question, sql in unique:
            rewrites = paraphrase(
                question, client, config.max_rewrites, model=config.model
            )
            stats.rewrites_generated += len(rewrites)
            topic = lineage_to_topic.get(lineage, "")
            family = [
                QuestionRecord(
                    id=lineage, base_id=lineage, topic=topic, question=question,
                    rewrite_index=0, sql=sql, dialect=dialect,
                    schema_id=schema.name,
                )
            ]
            for k, rewrite in enumerate(rewrites, start=1):
                family.append(
                    QuestionRecord(
                        id=f"{lineage}-r{k}", base_id=lineage, topic=topic,
                        question=rewrite, rewrite_index=k, sql=sql,
                        dialect=dialect, schema_id=schema.name,
                    )
                )
            for record in family:
                logs.append(
                    {"stage": "paraphrase", "record": record.id, "action": "accept", "reason": ""}
                )
            records.extend(family)
    except (TransportError, CassetteMiss) as exc:
        raise fail("paraphrase", exc) from exc

    records = split_dataset(records, config.split_ratio, config.rng_seed)
    stats.total_pairs = len(records)
    stats.train_count = sum(1 for r in records if r.split is Split.TRAIN)
    stats.test_count = sum(1 for r in records if r.split is Split.TEST)
    for record in records:
        logs.append(
            {"stage": "split", "record": record.id, "action": "accept", "reason": record.split.value}
        )
    stats.verify()
    return _write_outputs(out_dir, config, stats, logs, records, now, cassette_ref)


def _write_outputs(
    out_dir: Path,
    config: PipelineConfig,
    stats: PipelineStats,
    logs: list[dict],
    records: list[QuestionRecord],
    now: str,
    cassette_ref: str | None,
    status: str = "complete",
    failed_stage: str | None = None,
) -> DatasetManifest:
    records_path = out_dir / "records.jsonl"
    log_path = out_dir / "stage_log.jsonl"
    save_records(records_path, records)
    with open(log_path, "w", encoding="utf-8") as handle:
        for entry in logs:
            handle.write(canonical_json(entry) + "\n")
    manifest = DatasetManifest(
        config_hash=config.config_hash(),
        stats=stats,
        records_path=records_path.name,
        stage_log_path=log_path.name,
        created=now,
        cassette=cassette_ref,
        status=status,
        failed_stage=failed_stage,
    )
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_json_obj(), indent=2, sort_keys=True, ensure_ascii=False)
        + "\n"
    )
    return manifest
