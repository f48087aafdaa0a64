"""Citation-grounded response evaluation toolkit."""

from groundcheck.errors import (
    BackendError,
    BudgetExceeded,
    GroundcheckError,
    TemplateError,
    ValidationError,
)
from groundcheck.model import (
    BenchmarkRecord,
    Evidence,
    EvidenceKind,
    EvidenceSet,
    MetricsReport,
    QueryRecord,
    RawResponse,
    ResponseCounts,
    Variant,
    load_benchmark,
    save_benchmark,
    save_report,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BenchmarkRecord",
    "BudgetExceeded",
    "Evidence",
    "EvidenceKind",
    "EvidenceSet",
    "GroundcheckError",
    "MetricsReport",
    "QueryRecord",
    "RawResponse",
    "ResponseCounts",
    "TemplateError",
    "ValidationError",
    "Variant",
    "load_benchmark",
    "save_benchmark",
    "save_report",
]
