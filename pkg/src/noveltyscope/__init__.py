"""noveltyscope: evidence-grounded novelty reports for academic papers.

Pipeline: build a citation-graph reference corpus, index it for hybrid
retrieval, draft a point-wise novelty report with an LLM agent chain,
self-validate every citation against the cited full texts, and grade the
result with a fixed 69-item checklist.
"""

from .config import GatewayConfig, RunConfig, load_config
from .errors import (
    BudgetExceeded,
    CapacityTooSmall,
    ConfigError,
    DimensionMismatch,
    EmptyAnswers,
    EmptyCorpus,
    EmptyDocument,
    IncompleteMatrix,
    MalformedOutput,
    MissingClassAnnotations,
    MissingDimension,
    NoveltyScopeError,
    ProviderUnavailable,
    StructureViolation,
    TargetNotFound,
)
from .report import Report, load_report, parse_report, render_report, save_report

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded",
    "CapacityTooSmall",
    "ConfigError",
    "DimensionMismatch",
    "EmptyAnswers",
    "EmptyCorpus",
    "EmptyDocument",
    "GatewayConfig",
    "IncompleteMatrix",
    "MalformedOutput",
    "MissingClassAnnotations",
    "MissingDimension",
    "NoveltyScopeError",
    "ProviderUnavailable",
    "Report",
    "RunConfig",
    "StructureViolation",
    "TargetNotFound",
    "__version__",
    "load_config",
    "load_report",
    "parse_report",
    "render_report",
    "save_report",
]
