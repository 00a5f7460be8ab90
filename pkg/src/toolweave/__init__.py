"""Tool dependency graphs, PPR-based retrieval, and plan generation."""

from .errors import (
    ConfigError,
    GatewayFailure,
    ToolweaveError,
    ValidationFailure,
)
from .extraction import ExtractionConfig, ToolDependency, run_extraction
from .gateway import Gateway, GatewayConfig, Mode, Role
from .graph import (
    FusedGraph,
    PprConfig,
    build_tool_graph,
    extract_subgraph,
    fuse,
    ingest_document_graph,
    personalized_pagerank,
)
from .planning import PlanArtifact, assemble_context, generate_plan, validate_plan
from .retrieval import VectorStore, build_store, top_k
from .schemas import QueryRecord, ToolSchema, load_query_set, load_tools, normalize_tool_id
from .synth import CorpusSpec, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorpusSpec",
    "ExtractionConfig",
    "FusedGraph",
    "Gateway",
    "GatewayConfig",
    "GatewayFailure",
    "Mode",
    "PlanArtifact",
    "PprConfig",
    "QueryRecord",
    "Role",
    "ToolDependency",
    "ToolSchema",
    "ToolweaveError",
    "ValidationFailure",
    "VectorStore",
    "__version__",
    "assemble_context",
    "build_store",
    "build_tool_graph",
    "extract_subgraph",
    "fuse",
    "generate_corpus",
    "generate_plan",
    "ingest_document_graph",
    "load_query_set",
    "load_tools",
    "normalize_tool_id",
    "personalized_pagerank",
    "run_extraction",
    "top_k",
    "validate_plan",
]
