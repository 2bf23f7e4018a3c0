"""The central metrics service: push and pull ingestion, tiered storage,
cardinality limiting, range queries and derived views."""

from .query import AVG, COUNT, MAX, MIN, SUM, Aggregate, EmptyRange, Row, UnknownMetric, increase, nearest_rank, query_range
from .server import MetricsServer
from .service import IngestCounts, MetricsService, TargetUnreachable, scraped_kind
from .store import (
    DEFAULT_CARDINALITY_LIMIT,
    DEFAULT_TIERS,
    OVERFLOW_TAGS,
    ResolutionTier,
    Series,
    SeriesKey,
    SeriesStore,
    TierAggregate,
    parse_tiers,
)
from .views import MissingInstrument, ViewTable, derived_view, golden_view, red_view, use_view

__all__ = [
    "AVG", "COUNT", "MAX", "MIN", "SUM", "Aggregate", "EmptyRange", "Row", "UnknownMetric",
    "increase", "nearest_rank", "query_range", "MetricsServer", "IngestCounts", "MetricsService",
    "TargetUnreachable", "scraped_kind", "DEFAULT_CARDINALITY_LIMIT", "DEFAULT_TIERS", "OVERFLOW_TAGS",
    "ResolutionTier", "Series", "SeriesKey", "SeriesStore", "TierAggregate", "parse_tiers",
    "MissingInstrument", "ViewTable", "derived_view", "golden_view", "red_view", "use_view",
]
