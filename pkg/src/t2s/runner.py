"""SQL execution against a pluggable driver, with an embedded sqlite engine.

Every query run produces an :class:`ExecutionOutcome`: a fully materialized,
canonicalized table on success, the engine's diagnostic on failure, or a
timeout marker.  Nothing else escapes the boundary except
:class:`ConnectionLost` (infrastructure, not query failure).

The bundled retail fixture (customers, products, orders, order_lines; the
extended variant adds sellers and payments) ships as plain SQL files under
``t2s/fixtures/`` and seeds any driver that accepts the dialect-neutral
subset used there.
"""

from __future__ import annotations

import itertools
import re
import sqlite3
import threading
import time
from dataclasses import dataclass
from importlib import resources

from .model import (
    DialectTag,
    ResultTable,
    SchemaDescriptor,
    TableSchema,
    UnrepresentableValue,
)

DEFAULT_TIMEOUT_SECONDS = 60.0
PREVIEW_ROWS = 5

# How many sqlite VM instructions run between timeout checks.
_PROGRESS_INTERVAL = 1000

_memory_db_counter = itertools.count(1)


class ConnectionLost(Exception):
    """The connection is gone (closed or dropped); distinct from query failure."""


class SeedError(Exception):
    """Fixture DDL or data load failed; carries the engine diagnostic."""


class ExecutionOutcome:
    """Base of the three execution results."""

    def is_success(self) -> bool:
        return isinstance(self, Success)

    def has_rows(self) -> bool:
        return isinstance(self, Success) and self.table.row_count > 0


@dataclass(frozen=True)
class Success(ExecutionOutcome):
    table: ResultTable
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be >= 0")


@dataclass(frozen=True)
class EngineError(ExecutionOutcome):
    message: str
    duration: float


@dataclass(frozen=True)
class Timeout(ExecutionOutcome):
    limit: float


@dataclass(frozen=True)
class ResultPreview:
    """Compact result description fed to the plausibility-filter prompt."""

    row_count: int
    column_count: int
    column_names: tuple[str, ...]
    head_rows: tuple[str, ...]

    def render(self) -> str:
        lines = [
            f"dimensions: {self.row_count} rows x {self.column_count} columns",
            "columns: " + (", ".join(self.column_names) if self.column_names else "(none)"),
            f"first {len(self.head_rows)} rows:",
        ]
        lines.extend(self.head_rows)
        return "\n".join(lines)


def preview(table: ResultTable) -> ResultPreview:
    """Deterministic textual preview: dimensions, column names, first <=5 rows."""
    head = []
    for i, row in enumerate(table.rows()):
        if i >= PREVIEW_ROWS:
            break
        head.append("(" + ", ".join(cell.render() for cell in row) + ")")
    return ResultPreview(
        row_count=table.row_count,
        column_count=table.column_count,
        column_names=tuple(table.column_names),
        head_rows=tuple(head),
    )


class SqliteConnection:
    """Single-owner connection to the embedded engine; not shared across tasks."""

    def __init__(self, raw: sqlite3.Connection):
        self.raw = raw
        self.closed = False

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.raw.close()


def open_connection(url: str) -> SqliteConnection:
    """Open a connection from a driver URL.

    The bundled driver handles ``sqlite:`` URLs: ``sqlite::memory:``,
    ``sqlite:/path/to/file.db``, and ``sqlite:file:...?...`` URI forms.
    Other schemes (warehouse vendors) are extension points and raise.
    """
    scheme, sep, rest = url.partition(":")
    if not sep or scheme != "sqlite":
        raise ValueError(f"no driver registered for url: {url!r}")
    if rest.startswith("file:"):
        raw = sqlite3.connect(rest, uri=True, check_same_thread=False)
    else:
        raw = sqlite3.connect(rest or ":memory:", check_same_thread=False)
    return SqliteConnection(raw)


def execute(
    connection: SqliteConnection, sql: str, timeout: float = DEFAULT_TIMEOUT_SECONDS
) -> ExecutionOutcome:
    """Run one statement, fetch everything, canonicalize, and time it.

    Returns Success / EngineError / Timeout; raises ConnectionLost only when
    the connection itself is unusable.
    """
    if timeout <= 0:
        raise ValueError("timeout must be > 0")
    if connection.closed:
        raise ConnectionLost("connection is closed")

    deadline = time.monotonic() + timeout
    timed_out = False

    def guard() -> int:
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    raw = connection.raw
    start = time.monotonic()
    try:
        raw.set_progress_handler(guard, _PROGRESS_INTERVAL)
        try:
            cursor = raw.execute(sql)
            fetched = cursor.fetchall()
            names = [d[0] for d in cursor.description] if cursor.description else []
        finally:
            raw.set_progress_handler(None, _PROGRESS_INTERVAL)
    except sqlite3.OperationalError as exc:
        if timed_out:
            return Timeout(timeout)
        return EngineError(str(exc), time.monotonic() - start)
    except sqlite3.ProgrammingError as exc:
        if connection.closed or "closed database" in str(exc):
            raise ConnectionLost(str(exc)) from exc
        return EngineError(str(exc), time.monotonic() - start)
    except (sqlite3.DatabaseError, sqlite3.InterfaceError, sqlite3.Warning) as exc:
        # sqlite3.Warning covers multi-statement misuse on older Pythons.
        return EngineError(str(exc), time.monotonic() - start)

    try:
        table = ResultTable.from_rows(names, fetched)
    except UnrepresentableValue as exc:
        return EngineError(
            f"unrepresentable value in result: {exc.type_name}",
            time.monotonic() - start,
        )
    return Success(table, time.monotonic() - start)


@dataclass(frozen=True)
class RetailFixture:
    """Schema DDL plus deterministic seed rows for the retail tables."""

    variant: str
    schema_sql: str
    data_sql: str
    tables: tuple[str, ...]

    @classmethod
    def load(cls, variant: str = "base") -> RetailFixture:
        if variant not in ("base", "extended"):
            raise ValueError(f"unknown fixture variant: {variant!r}")
        base = resources.files("t2s.fixtures")
        schema = (base / "retail_base" / "schema.sql").read_text()
        data = (base / "retail_base" / "data.sql").read_text()
        tables = ["customers", "products", "orders", "order_lines"]
        if variant == "extended":
            schema += "\n" + (base / "retail_extended" / "schema.sql").read_text()
            data += (base / "retail_extended" / "data.sql").read_text()
            tables += ["sellers", "payments"]
        return cls(variant, schema, data, tuple(tables))

    def row_counts(self) -> dict[str, int]:
        """Seed row count per table, counted straight from the data files."""
        counts = {name: 0 for name in self.tables}
        for match in re.finditer(r"INSERT INTO (\w+)", self.data_sql):
            counts[match.group(1)] += 1
        return counts

    def schema_descriptor(self, dialect: DialectTag = DialectTag.GENERIC) -> SchemaDescriptor:
        """Parse the fixture DDL into the prompt-facing schema description."""
        tables = []
        for match in re.finditer(
            r"CREATE TABLE (\w+)\s*\((.*?)\);", self.schema_sql, re.DOTALL
        ):
            name, body = match.group(1), match.group(2)
            columns = []
            for col_def in _split_top_level(body):
                parts = col_def.split()
                if not parts or parts[0].upper() in ("PRIMARY", "FOREIGN", "UNIQUE", "CHECK"):
                    continue
                col_name = parts[0]
                col_type = parts[1] if len(parts) > 1 else ""
                columns.append((col_name, col_type))
            tables.append(TableSchema(name, tuple(columns)))
        return SchemaDescriptor(f"retail_{self.variant}", tuple(tables), dialect)


def _split_top_level(body: str) -> list[str]:
    """Split a DDL column list on commas outside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return parts


def seed_fixture(connection: SqliteConnection, fixture: RetailFixture) -> None:
    """Create and populate all fixture tables; drop-and-recreate so re-running
    is idempotent."""
    if connection.closed:
        raise ConnectionLost("connection is closed")
    drops = "".join(
        f"DROP TABLE IF EXISTS {name};\n" for name in reversed(fixture.tables)
    )
    try:
        connection.raw.executescript(drops + fixture.schema_sql + "\n" + fixture.data_sql)
    except sqlite3.Error as exc:
        raise SeedError(str(exc)) from exc


@dataclass
class QueryExecutor:
    """Connection pool over one database; independent queries run concurrently,
    each on its own connection.

    For ``sqlite::memory:`` a shared-cache in-memory database is created so
    every pooled connection sees the same data; an anchor connection keeps it
    alive for the executor's lifetime.
    """

    url: str = "sqlite::memory:"
    timeout: float = DEFAULT_TIMEOUT_SECONDS
    pool_size: int = 4

    def __post_init__(self):
        if self.url == "sqlite::memory:":
            name = f"t2s_mem_{next(_memory_db_counter)}"
            self.url = f"sqlite:file:{name}?mode=memory&cache=shared"
        self._lock = threading.Condition()
        self._free: list[SqliteConnection] = []
        self._total = 0
        self._closed = False
        self._anchor = open_connection(self.url)

    def _acquire(self) -> SqliteConnection:
        with self._lock:
            while True:
                if self._closed:
                    raise ConnectionLost("executor is closed")
                if self._free:
                    return self._free.pop()
                if self._total < self.pool_size:
                    self._total += 1
                    break
                self._lock.wait()
        return open_connection(self.url)

    def _release(self, conn: SqliteConnection) -> None:
        with self._lock:
            if self._closed:
                conn.close()
                return
            self._free.append(conn)
            self._lock.notify()

    def seed(self, fixture: RetailFixture) -> None:
        seed_fixture(self._anchor, fixture)

    def run(self, sql: str, timeout: float | None = None) -> ExecutionOutcome:
        conn = self._acquire()
        try:
            return execute(conn, sql, timeout if timeout is not None else self.timeout)
        finally:
            self._release(conn)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            for conn in self._free:
                conn.close()
            self._free.clear()
            self._anchor.close()
            self._lock.notify_all()

    def __enter__(self) -> QueryExecutor:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
