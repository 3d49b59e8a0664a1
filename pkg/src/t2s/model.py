"""Shared domain types and cell-value canonicalization.

Every result cell is reduced to a canonical form so that values coming from
different engines (or from serialized files) compare byte-for-byte equal when
they mean the same thing.  The canonical JSON encodings defined here are
normative for dataset files, cassettes, and the compare CLI; see README.

Canonicalization rules:
  * decimals with a zero fractional part collapse to Integer (engines disagree
    on whether e.g. COUNT(*) comes back as integer or decimal),
  * trailing whitespace is trimmed from text, leading whitespace kept,
  * timestamps are normalized to UTC,
  * NULL equals NULL (result-set equivalence, not SQL three-valued logic).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from datetime import date, datetime, timezone
from decimal import Decimal, InvalidOperation, localcontext

I64_MIN = -(2**63)
I64_MAX = 2**63 - 1

# Cap from the canonical-form contract: no decimals beyond 38 significant digits.
MAX_DECIMAL_DIGITS = 38


class UnrepresentableValue(Exception):
    """Raised when an engine value has no canonical cell representation."""

    def __init__(self, type_name: str):
        self.type_name = type_name
        super().__init__(f"no canonical cell representation for engine type: {type_name}")


class CellKind(enum.Enum):
    NULL = "null"
    BOOL = "bool"
    INT = "int"
    DEC = "dec"
    TEXT = "text"
    DATE = "date"
    TS = "ts"


@dataclass(frozen=True)
class CellValue:
    """One canonicalized result cell: a (kind, value) tagged union.

    Instances are only constructed through :func:`canonicalize_cell` (or the
    classmethod constructors, which canonicalize), so two equal cells always
    have identical canonical encodings.
    """

    kind: CellKind
    value: object = None

    @classmethod
    def null(cls) -> CellValue:
        return cls(CellKind.NULL, None)

    @classmethod
    def boolean(cls, v: bool) -> CellValue:
        return cls(CellKind.BOOL, bool(v))

    @classmethod
    def integer(cls, v: int) -> CellValue:
        return canonicalize_cell(int(v))

    @classmethod
    def decimal(cls, v) -> CellValue:
        return canonicalize_cell(Decimal(str(v)) if not isinstance(v, Decimal) else v)

    @classmethod
    def text(cls, v: str) -> CellValue:
        return canonicalize_cell(str(v))

    def is_null(self) -> bool:
        return self.kind is CellKind.NULL

    def render(self) -> str:
        """Deterministic single-line rendering used in previews."""
        if self.kind is CellKind.NULL:
            return "NULL"
        if self.kind is CellKind.BOOL:
            return "true" if self.value else "false"
        if self.kind is CellKind.INT:
            return str(self.value)
        if self.kind is CellKind.DEC:
            return format(self.value, "f")
        if self.kind is CellKind.TEXT:
            return "'" + str(self.value) + "'"
        if self.kind is CellKind.DATE:
            return self.value.isoformat()
        return _format_timestamp(self.value)

    def to_json_obj(self) -> dict:
        """Tagged-union encoding, e.g. ``{"t":"int","v":5}``."""
        if self.kind is CellKind.NULL:
            return {"t": "null"}
        if self.kind is CellKind.DEC:
            return {"t": "dec", "v": format(self.value, "f")}
        if self.kind is CellKind.DATE:
            return {"t": "date", "v": self.value.isoformat()}
        if self.kind is CellKind.TS:
            return {"t": "ts", "v": _format_timestamp(self.value)}
        return {"t": self.kind.value, "v": self.value}

    @classmethod
    def from_json_obj(cls, obj: dict) -> CellValue:
        tag = obj.get("t")
        if tag == "null":
            return cls.null()
        v = obj.get("v")
        if tag == "bool":
            return cls(CellKind.BOOL, bool(v))
        if tag == "int":
            return canonicalize_cell(int(v))
        if tag == "dec":
            try:
                return canonicalize_cell(Decimal(str(v)))
            except InvalidOperation:
                raise ValueError(f"invalid decimal literal: {v!r}")
        if tag == "text":
            return canonicalize_cell(str(v))
        if tag == "date":
            return cls(CellKind.DATE, date.fromisoformat(v))
        if tag == "ts":
            return cls(CellKind.TS, _parse_timestamp(v))
        raise ValueError(f"unknown cell tag: {tag!r}")


def _format_timestamp(dt: datetime) -> str:
    base = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if dt.microsecond:
        base += f".{dt.microsecond:06d}"
    return base + "Z"


def _parse_timestamp(text: str) -> datetime:
    # Python 3.10's fromisoformat does not accept a trailing "Z".
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _canonical_decimal(value: Decimal) -> CellValue:
    if not value.is_finite():
        raise UnrepresentableValue("non-finite decimal")
    with localcontext() as ctx:
        ctx.prec = MAX_DECIMAL_DIGITS + 2
        norm = value.normalize()
    digits = len(norm.as_tuple().digits)
    if digits > MAX_DECIMAL_DIGITS:
        raise UnrepresentableValue(f"decimal beyond {MAX_DECIMAL_DIGITS} significant digits")
    if norm == norm.to_integral_value():
        as_int = int(norm)
        if I64_MIN <= as_int <= I64_MAX:
            return CellValue(CellKind.INT, as_int)
        # Integral but outside the 64-bit signed range stays a decimal.
        return CellValue(CellKind.DEC, norm)
    return CellValue(CellKind.DEC, norm)


def canonicalize_cell(raw) -> CellValue:
    """Map an engine-reported value to its unique canonical cell.

    Accepts raw driver values (None, bool, int, float, Decimal, str,
    date, datetime) as well as already-canonical :class:`CellValue`
    instances, on which it is the identity (idempotence).

    Raises :class:`UnrepresentableValue` for engine types outside the
    variant set (binary blobs, non-finite floats, oversized integers).
    """
    if isinstance(raw, CellValue):
        return raw
    if raw is None:
        return CellValue.null()
    if isinstance(raw, bool):
        return CellValue(CellKind.BOOL, raw)
    if isinstance(raw, int):
        if I64_MIN <= raw <= I64_MAX:
            return CellValue(CellKind.INT, raw)
        return _canonical_decimal(Decimal(raw))
    if isinstance(raw, float):
        if raw != raw or raw in (float("inf"), float("-inf")):
            raise UnrepresentableValue("non-finite float")
        # str(float) is the shortest round-trip form, so this is deterministic.
        return _canonical_decimal(Decimal(str(raw)))
    if isinstance(raw, Decimal):
        return _canonical_decimal(raw)
    if isinstance(raw, str):
        return CellValue(CellKind.TEXT, raw.rstrip())
    if isinstance(raw, datetime):
        # Checked before date: datetime is a date subclass.
        if raw.tzinfo is None:
            raw = raw.replace(tzinfo=timezone.utc)
        return CellValue(CellKind.TS, raw.astimezone(timezone.utc))
    if isinstance(raw, date):
        return CellValue(CellKind.DATE, raw)
    if isinstance(raw, (bytes, bytearray, memoryview)):
        raise UnrepresentableValue("blob")
    raise UnrepresentableValue(type(raw).__name__)


@dataclass(frozen=True)
class ResultTable:
    """Column-ordered table of canonicalized cells, the unit of comparison.

    Column names may repeat (SQL engines permit duplicate output names);
    every column holds exactly ``row_count`` cells.
    """

    columns: tuple[tuple[str, tuple[CellValue, ...]], ...]
    row_count: int

    def __post_init__(self):
        for name, cells in self.columns:
            if len(cells) != self.row_count:
                raise ValueError(
                    f"column {name!r} has {len(cells)} cells, expected {self.row_count}"
                )

    @classmethod
    def from_columns(cls, columns) -> ResultTable:
        """Build from ``[(name, iterable_of_raw_values), ...]``, canonicalizing."""
        cols = tuple(
            (str(name), tuple(canonicalize_cell(v) for v in cells))
            for name, cells in columns
        )
        row_count = len(cols[0][1]) if cols else 0
        return cls(cols, row_count)

    @classmethod
    def from_rows(cls, names, rows) -> ResultTable:
        """Build from column names plus row tuples, canonicalizing."""
        names = [str(n) for n in names]
        materialized = [tuple(canonicalize_cell(v) for v in row) for row in rows]
        for row in materialized:
            if len(row) != len(names):
                raise ValueError("row width does not match column count")
        cols = tuple(
            (name, tuple(row[i] for row in materialized))
            for i, name in enumerate(names)
        )
        return cls(cols, len(materialized))

    @property
    def column_count(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def rows(self):
        for i in range(self.row_count):
            yield tuple(cells[i] for _, cells in self.columns)

    def to_json_obj(self) -> dict:
        return {
            "columns": [
                {"name": name, "cells": [c.to_json_obj() for c in cells]}
                for name, cells in self.columns
            ],
            "row_count": self.row_count,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> ResultTable:
        cols = tuple(
            (
                str(col["name"]),
                tuple(CellValue.from_json_obj(c) for c in col["cells"]),
            )
            for col in obj["columns"]
        )
        table = cls(cols, int(obj["row_count"]))
        return table


class DialectTag(enum.Enum):
    SNOWFLAKE = "snowflake"
    GOOGLESQL = "googlesql"
    # The embedded test engine speaks a dialect-neutral SQL subset.
    GENERIC = "generic"

    @classmethod
    def parse(cls, text: str) -> DialectTag:
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown dialect: {text!r}") from None

    def display(self) -> str:
        return {"snowflake": "Snowflake SQL", "googlesql": "GoogleSQL", "generic": "generic SQL"}[
            self.value
        ]


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple[tuple[str, str], ...]  # (column name, declared type)


@dataclass(frozen=True)
class SchemaDescriptor:
    """Database shape handed to the model: tables, columns, and the dialect."""

    name: str
    tables: tuple[TableSchema, ...]
    dialect: DialectTag

    def __post_init__(self):
        seen_tables = set()
        for table in self.tables:
            if not table.name:
                raise ValueError("table name must be non-empty")
            if table.name in seen_tables:
                raise ValueError(f"duplicate table name: {table.name!r}")
            seen_tables.add(table.name)
            seen_cols = set()
            for col_name, col_type in table.columns:
                if not col_name:
                    raise ValueError(f"empty column name in table {table.name!r}")
                if col_name in seen_cols:
                    raise ValueError(f"duplicate column {col_name!r} in table {table.name!r}")
                seen_cols.add(col_name)

    def render_for_prompt(self) -> str:
        """Human-readable schema block inserted into prompts."""
        lines = []
        for table in self.tables:
            cols = ", ".join(f"{name} {ctype}" for name, ctype in table.columns)
            lines.append(f"TABLE {table.name} ({cols})")
        return "\n".join(lines)


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class QuestionRecord:
    """A natural-language question with its topic, lineage, and ground-truth SQL.

    A paraphrase family shares one ``base_id``; the original question has
    ``rewrite_index`` 0 and ``id == base_id``, rewrites count 1..4.
    """

    id: str
    base_id: str
    topic: str
    question: str
    rewrite_index: int
    sql: str
    dialect: DialectTag
    schema_id: str
    split: Split = Split.UNASSIGNED

    def __post_init__(self):
        if not 0 <= self.rewrite_index <= 4:
            raise ValueError(f"rewrite_index out of range: {self.rewrite_index}")
        if (self.rewrite_index == 0) != (self.id == self.base_id):
            raise ValueError("rewrite_index must be 0 exactly when id == base_id")

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "base_id": self.base_id,
            "topic": self.topic,
            "question": self.question,
            "rewrite_index": self.rewrite_index,
            "sql": self.sql,
            "dialect": self.dialect.value,
            "schema_id": self.schema_id,
            "split": self.split.value,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> QuestionRecord:
        return cls(
            id=str(obj["id"]),
            base_id=str(obj["base_id"]),
            topic=str(obj["topic"]),
            question=str(obj["question"]),
            rewrite_index=int(obj["rewrite_index"]),
            sql=str(obj["sql"]),
            dialect=DialectTag.parse(obj["dialect"]),
            schema_id=str(obj["schema_id"]),
            split=Split(obj.get("split", "unassigned")),
        )


def canonical_json(obj) -> str:
    """Key-sorted, compact JSON used for hashing and JSONL lines."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
