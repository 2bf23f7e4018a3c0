"""The tracing service: ingestion, trace assembly, skew repair, storage."""

from .collector import DEFAULT_IDLE_TIMEOUT_S, DEFAULT_MAX_WAIT_S, Ingest, PendingTrace, TraceCollector
from .server import CollectorServer
from .store import NotFound, TraceFilter, TraceStore, TraceSummary, summarize
from .tree import Anomaly, EmptyTrace, SpanNode, TraceTree, adjust_clock_skew, assemble

__all__ = [
    "Anomaly",
    "CollectorServer",
    "DEFAULT_IDLE_TIMEOUT_S",
    "DEFAULT_MAX_WAIT_S",
    "EmptyTrace",
    "Ingest",
    "NotFound",
    "PendingTrace",
    "SpanNode",
    "TraceCollector",
    "TraceFilter",
    "TraceStore",
    "TraceSummary",
    "TraceTree",
    "adjust_clock_skew",
    "assemble",
    "summarize",
]
