"""Single entry point exposing the pipeline, benchmark, and comparator.

Subcommands: generate, benchmark, compare, split.  Exit codes are a stable
contract: 0 success/Correct, 1 domain failure, 2 usage or config error.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import re
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .benchmark import (
    ChatModel,
    EchoModel,
    compute_metrics,
    render_figure,
    render_report,
    run_benchmark,
    write_audit,
)
from .compare import CompareConfig, CompareMode, compare_tables
from .datagen import (
    PipelineConfig,
    PipelineError,
    load_records,
    run_pipeline,
    save_records,
    split_dataset,
)
from .gateway import (
    Cassette,
    ChatClient,
    LiveTransport,
    RecordingTransport,
    ReplayTransport,
    TransportError,
    list_templates,
    render_prompt,
)
from .model import DialectTag, ResultTable, Split, canonical_json
from .runner import ConnectionLost, QueryExecutor, RetailFixture, SeedError

_INT_RE = re.compile(r"^[+-]?\d+$")
_DEC_RE = re.compile(r"^[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?$")

_MODE_ALIASES = {
    "multiset": CompareMode.COLUMN_MULTISET,
    "column_multiset": CompareMode.COLUMN_MULTISET,
    "strict": CompareMode.STRICT_ROWS,
    "strict_rows": CompareMode.STRICT_ROWS,
}

_CONFIG_SECTIONS = {
    "pipeline": {
        "seed_topics", "target_topic_count", "max_questions_per_topic",
        "max_heal_attempts", "max_rewrites", "split_ratio", "rng_seed",
        "dialects", "model", "topic_concurrency",
    },
    "compare": {"numeric_tolerance", "mode"},
    "executor": {"url", "timeout", "pool_size"},
    "llm": {"transport", "base_url_env", "api_key_env", "concurrency",
            "requests_per_minute"},
    "paths": {"output_dir", "cassette", "fixture", "fixture_dir"},
}


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class AppConfig:
    pipeline: PipelineConfig
    compare: CompareConfig
    executor_url: str = "sqlite::memory:"
    executor_timeout: float = 60.0
    executor_pool_size: int = 4
    llm_transport: str = "replay"
    llm_base_url_env: str = "T2S_LLM_BASE_URL"
    llm_api_key_env: str = "T2S_LLM_API_KEY"
    llm_concurrency: int = 4
    llm_rpm: int | None = None
    output_dir: str = "out"
    cassette: str | None = None
    fixture: str = "base"
    fixture_dir: str | None = None


def _check_keys(section: str, data: dict) -> None:
    allowed = _CONFIG_SECTIONS[section]
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
        )


def load_app_config(path) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    unknown = set(data) - set(_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    try:
        pipe_raw = dict(data.get("pipeline") or {})
        _check_keys("pipeline", pipe_raw)
        if "seed_topics" in pipe_raw:
            pipe_raw["seed_topics"] = tuple(str(t) for t in pipe_raw["seed_topics"])
        if "dialects" in pipe_raw:
            pipe_raw["dialects"] = tuple(
                DialectTag.parse(d) for d in pipe_raw["dialects"]
            )
        pipeline = PipelineConfig(**pipe_raw)

        cmp_raw = dict(data.get("compare") or {})
        _check_keys("compare", cmp_raw)
        if "mode" in cmp_raw:
            cmp_raw["mode"] = _parse_mode(cmp_raw["mode"])
        if "numeric_tolerance" in cmp_raw:
            cmp_raw["numeric_tolerance"] = float(cmp_raw["numeric_tolerance"])
        compare = CompareConfig(**cmp_raw)

        exec_raw = dict(data.get("executor") or {})
        _check_keys("executor", exec_raw)
        llm_raw = dict(data.get("llm") or {})
        _check_keys("llm", llm_raw)
        paths_raw = dict(data.get("paths") or {})
        _check_keys("paths", paths_raw)

        transport = str(llm_raw.get("transport", "replay"))
        if transport not in ("live", "replay", "record"):
            raise ConfigError(f"llm.transport must be live, replay, or record, got {transport!r}")
        fixture = str(paths_raw.get("fixture", "base"))
        if fixture not in ("base", "extended"):
            raise ConfigError(f"paths.fixture must be base or extended, got {fixture!r}")

        return AppConfig(
            pipeline=pipeline,
            compare=compare,
            executor_url=str(exec_raw.get("url", "sqlite::memory:")),
            executor_timeout=float(exec_raw.get("timeout", 60.0)),
            executor_pool_size=int(exec_raw.get("pool_size", 4)),
            llm_transport=transport,
            llm_base_url_env=str(llm_raw.get("base_url_env", "T2S_LLM_BASE_URL")),
            llm_api_key_env=str(llm_raw.get("api_key_env", "T2S_LLM_API_KEY")),
            llm_concurrency=int(llm_raw.get("concurrency", 4)),
            llm_rpm=(
                int(llm_raw["requests_per_minute"])
                if llm_raw.get("requests_per_minute") is not None
                else None
            ),
            output_dir=str(paths_raw.get("output_dir", "out")),
            cassette=(
                str(paths_raw["cassette"]) if paths_raw.get("cassette") else None
            ),
            fixture=fixture,
            fixture_dir=(
                str(paths_raw["fixture_dir"]) if paths_raw.get("fixture_dir") else None
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_mode(text: str) -> CompareMode:
    try:
        return _MODE_ALIASES[str(text).strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown compare mode: {text!r}") from None


def _resolve_fixture(cfg: AppConfig) -> RetailFixture:
    if cfg.fixture_dir:
        root = Path(cfg.fixture_dir)
        schema = (root / "schema.sql").read_text()
        data = (root / "data.sql").read_text()
        tables = re.findall(r"CREATE TABLE (\w+)", schema)
        return RetailFixture("custom", schema, data, tuple(tables))
    return RetailFixture.load(cfg.fixture)


def _build_client(cfg: AppConfig):
    """Returns (client, cassette_ref) for the configured transport."""
    if cfg.llm_transport == "replay":
        if not cfg.cassette:
            raise ConfigError("llm.transport=replay requires paths.cassette")
        if not Path(cfg.cassette).exists():
            raise ConfigError(f"cassette file not found: {cfg.cassette}")
        transport = ReplayTransport(Cassette.load(cfg.cassette))
    else:
        live = LiveTransport(
            base_url=os.environ.get(cfg.llm_base_url_env),
            api_key=os.environ.get(cfg.llm_api_key_env),
        )
        if cfg.llm_transport == "record":
            if not cfg.cassette:
                raise ConfigError("llm.transport=record requires paths.cassette")
            transport = RecordingTransport(live, path=cfg.cassette)
        else:
            transport = live
    client = ChatClient(
        transport, max_in_flight=cfg.llm_concurrency, requests_per_minute=cfg.llm_rpm
    )
    return client, cfg.cassette


_TEMPLATE_PROBE_VARS = {
    "topic_expansion": {"schema": "s", "existing_topics": "t", "count": "1"},
    "question_generation": {"schema": "s", "dialect": "d", "topic": "t",
                            "max_questions": "1"},
    "sql_generation": {"schema": "s", "dialect": "d", "question": "q"},
    "sql_repair": {"schema": "s", "dialect": "d", "question": "q", "sql": "x",
                   "error": "e"},
    "result_filter": {"question": "q", "preview": "p"},
    "paraphrase": {"question": "q", "max_rewrites": "1"},
}


def _validate_templates() -> None:
    for name in list_templates():
        render_prompt(name, _TEMPLATE_PROBE_VARS.get(name, {}))


def _load_result_table(path) -> ResultTable:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"result file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        obj = json.loads(text)
        return ResultTable.from_json_obj(obj)
    rows = [row for row in csv.reader(text.splitlines()) if row]
    if not rows:
        raise ValueError(f"CSV file {path} has no header row")
    header, body = rows[0], rows[1:]
    for row in body:
        if len(row) != len(header):
            raise ValueError(f"CSV row width differs from header in {path}")
    return ResultTable.from_rows(
        header, [[_csv_cell(value) for value in row] for row in body]
    )


def _csv_cell(text: str):
    """CSV cells are type-sniffed: empty -> NULL, integer and decimal literals
    -> numbers, everything else stays text."""
    if text == "":
        return None
    if _INT_RE.match(text):
        return int(text)
    if _DEC_RE.match(text):
        from decimal import Decimal

        return Decimal(text)
    return text


@click.group()
@click.version_option(version=__version__, prog_name="t2s")
def main():
    """Synthetic Text-to-SQL dataset generation and execution-match benchmarking."""


@main.command()
@click.option("--config", "-c", "config_path", required=True,
              type=click.Path(), help="YAML config file.")
@click.option("--output-dir", "-o", default=None, help="Override paths.output_dir.")
@click.option("--cassette", default=None, help="Override paths.cassette.")
@click.option("--dry-run", is_flag=True,
              help="Validate config and templates only; no client calls.")
def generate(config_path, output_dir, cassette, dry_run):
    """Run the dataset pipeline and write records, stage log, and manifest."""
    try:
        cfg = load_app_config(config_path)
        if output_dir:
            cfg.output_dir = output_dir
        if cassette:
            cfg.cassette = cassette
        if dry_run:
            _validate_templates()
            click.echo("config and templates OK (dry run)")
            return
        client, cassette_ref = _build_client(cfg)
        fixture = _resolve_fixture(cfg)
    except (ConfigError, TransportError, OSError) as exc:
        raise click.UsageError(str(exc))

    try:
        with QueryExecutor(
            cfg.executor_url, cfg.executor_timeout, cfg.executor_pool_size
        ) as executor:
            executor.seed(fixture)
            schema = fixture.schema_descriptor(cfg.pipeline.dialects[0])
            manifest = run_pipeline(
                cfg.pipeline, schema, executor, client, cfg.output_dir,
                cassette_ref=cassette_ref,
            )
    except PipelineError as exc:
        click.echo(f"pipeline failed: {exc}", err=True)
        sys.exit(1)
    except (SeedError, ConnectionLost) as exc:
        click.echo(f"executor failure: {exc}", err=True)
        sys.exit(1)

    click.echo(f"manifest: {Path(cfg.output_dir) / 'manifest.json'}")
    for key, value in manifest.stats.to_json_obj().items():
        click.echo(f"  {key}: {value}")


@main.command()
@click.argument("dataset", type=click.Path())
@click.option("--config", "-c", "config_path", default=None,
              help="Optional YAML config (executor, compare, llm sections).")
@click.option("--model", "model_kind", default="echo",
              type=click.Choice(["echo", "replay", "live"]),
              help="Model under test: built-in echo oracle, cassette replay, or live endpoint.")
@click.option("--cassette", default=None, help="Cassette for --model replay.")
@click.option("--model-name", default="gpt-4", help="Model name sent in requests.")
@click.option("--label", default=None, help="Row label in the report.")
@click.option("--format", "fmt", default="markdown",
              type=click.Choice(["markdown", "json"]))
@click.option("--output-dir", "-o", default="benchmark_out")
@click.option("--fixture", default=None, type=click.Choice(["base", "extended"]),
              help="Fixture variant; defaults to the config's paths.fixture.")
@click.option("--figure/--no-figure", default=True,
              help="Also render the metrics chart next to the report.")
@click.option("--concurrency", default=1, type=int)
def benchmark(dataset, config_path, model_kind, cassette, model_name, label, fmt,
              output_dir, fixture, figure, concurrency):
    """Benchmark a model over the dataset's test split and write the report."""
    try:
        cfg = load_app_config(config_path) if config_path else None
        records = load_records(dataset)
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        raise click.UsageError(str(exc))
    testset = [r for r in records if r.split is Split.TEST]
    if not testset:
        raise click.UsageError("dataset has no records with split=test")

    compare_cfg = cfg.compare if cfg else CompareConfig()
    executor_url = cfg.executor_url if cfg else "sqlite::memory:"
    timeout = cfg.executor_timeout if cfg else 60.0
    if fixture is None:
        fixture = cfg.fixture if cfg else "base"
    fixture_obj = (
        _resolve_fixture(cfg) if cfg and cfg.fixture_dir else RetailFixture.load(fixture)
    )

    try:
        with QueryExecutor(executor_url, timeout) as executor:
            executor.seed(fixture_obj)
            schema = fixture_obj.schema_descriptor(testset[0].dialect)
            if model_kind == "echo":
                model = EchoModel()
            else:
                if model_kind == "replay":
                    if not cassette:
                        raise click.UsageError("--model replay requires --cassette")
                    transport = ReplayTransport(Cassette.load(cassette))
                else:
                    transport = LiveTransport()
                model = ChatModel(ChatClient(transport), schema, model=model_name)
            bench_records = run_benchmark(
                testset, model, executor, compare_cfg, concurrency=concurrency
            )
            metrics = compute_metrics(bench_records)
    except (SeedError, ConnectionLost, TransportError) as exc:
        click.echo(f"benchmark failed: {exc}", err=True)
        sys.exit(1)

    row_label = label or f"{model_name if model_kind != 'echo' else 'echo'} " \
                         f"({testset[0].dialect.display()})"
    entries = [(row_label, metrics)]
    report = render_report(entries, fmt)

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_file = out / ("report.json" if fmt == "json" else "report.md")
    report_file.write_text(report + "\n")
    write_audit(bench_records, out / "audit.jsonl")
    if figure:
        render_figure(entries, out / "report.png")
    click.echo(report)
    click.echo(f"report written to {report_file}", err=True)


@main.command()
@click.argument("truth", type=click.Path())
@click.argument("candidate", type=click.Path())
@click.option("--tolerance", default=1e-6, type=float,
              help="Relative tolerance for decimal equality.")
@click.option("--mode", default="multiset",
              type=click.Choice(sorted(_MODE_ALIASES)),
              help="strict additionally requires whole-row agreement.")
def compare(truth, candidate, tolerance, mode):
    """Compare two result files (canonical JSON or CSV with a header).

    Prints the verdict as JSON; exits 0 for Correct, 1 for any mismatch.
    """
    try:
        cfg = CompareConfig(numeric_tolerance=tolerance, mode=_MODE_ALIASES[mode])
        truth_table = _load_result_table(truth)
        candidate_table = _load_result_table(candidate)
    except (ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
        click.echo(f"parse failure: {exc}", err=True)
        sys.exit(2)
    verdict = compare_tables(truth_table, candidate_table, cfg)
    click.echo(canonical_json(verdict.to_json_obj()))
    sys.exit(0 if verdict.is_correct else 1)


@main.command()
@click.argument("dataset", type=click.Path())
@click.option("--ratio", default=0.8, type=float, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--output", "-o", default=None,
              help="Output path; defaults to rewriting the dataset in place.")
def split(dataset, ratio, seed, output):
    """Re-split an existing dataset with a new seed/ratio (family-aware)."""
    try:
        records = load_records(dataset)
        if not records:
            raise ValueError("dataset is empty")
        cleared = [dataclasses.replace(r, split=Split.UNASSIGNED) for r in records]
        resplit = split_dataset(cleared, ratio, seed)
    except (OSError, ValueError, KeyError) as exc:
        raise click.UsageError(str(exc))
    out_path = output or dataset
    save_records(out_path, resplit)
    train = sum(1 for r in resplit if r.split is Split.TRAIN)
    click.echo(
        f"wrote {out_path}: {train} train / {len(resplit) - train} test records"
    )


if __name__ == "__main__":
    main()
