"""Synthetic Text-to-SQL dataset generation and execution-match benchmarking."""

__version__ = "0.1.0"

from .compare import CompareConfig, CompareMode, compare_tables  # noqa: F401
from .model import (  # noqa: F401
    CellValue,
    DialectTag,
    QuestionRecord,
    ResultTable,
    SchemaDescriptor,
    Split,
    canonicalize_cell,
)

__all__ = [
    "CellValue",
    "CompareConfig",
    "CompareMode",
    "DialectTag",
    "QuestionRecord",
    "ResultTable",
    "SchemaDescriptor",
    "Split",
    "canonicalize_cell",
    "compare_tables",
    "__version__",
]
