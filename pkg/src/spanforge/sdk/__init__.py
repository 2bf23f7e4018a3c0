"""In-service instrumentation: spans, correlated logs, metric instruments and
their export paths (push through a buffer, pull through a scrape endpoint)."""

from __future__ import annotations

from typing import Callable

from ..clock import Clock, system_clock
from ..model import IdSource, TraceId
from ..net import LineServer
from .config import DEFAULT_HISTOGRAM_BOUNDS, SdkConfig
from .export import (
    CallbackSink,
    ExportBuffer,
    Flusher,
    ListSink,
    RoutingSink,
    SinkUnavailable,
    SocketSink,
    drain,
    flush_push,
)
from .metrics import (
    HistogramState,
    Instrument,
    InstrumentKind,
    KindMismatch,
    NegativeCounterDelta,
    RedInstruments,
    Registry,
)
from .tracer import CLOCK_ANOMALY_TAG, ActiveSpan, DoubleFinish, Tracer

SCRAPE_REQUEST = "SCRAPE"


class Telemetry:
    """Everything one service needs: tracer, metric registry with the RED
    bundle, and the shared export buffer."""

    def __init__(
        self,
        config: SdkConfig,
        clock: Clock = system_clock,
        ids: IdSource | None = None,
        head_sampler: Callable[[TraceId], bool] | None = None,
    ) -> None:
        self.config = config
        self.clock = clock
        self.buffer = ExportBuffer(config.buffer_capacity)
        self.tracer = Tracer(config, self.buffer, clock, ids, head_sampler)
        push = self.buffer if config.export_mode == "push" else None
        self.metrics = Registry(clock, push, config.histogram_bounds)
        self.red = RedInstruments(self.metrics, config.service_name, config.node_label)


class ScrapeServer(LineServer):
    """Serves ``registry.expose_scrape()`` to ``SCRAPE`` requests."""

    def __init__(self, registry: Registry, address: tuple[str, int] = ("127.0.0.1", 0)) -> None:
        self.registry = registry

        def handle(first, _rest):
            if first.strip() != SCRAPE_REQUEST:
                return ["error: expected SCRAPE"]
            return registry.expose_scrape().splitlines()

        super().__init__(handle, address)


__all__ = [
    "ActiveSpan",
    "CLOCK_ANOMALY_TAG",
    "CallbackSink",
    "DEFAULT_HISTOGRAM_BOUNDS",
    "DoubleFinish",
    "ExportBuffer",
    "Flusher",
    "HistogramState",
    "Instrument",
    "InstrumentKind",
    "KindMismatch",
    "ListSink",
    "NegativeCounterDelta",
    "RedInstruments",
    "Registry",
    "RoutingSink",
    "SCRAPE_REQUEST",
    "ScrapeServer",
    "SdkConfig",
    "SinkUnavailable",
    "SocketSink",
    "Telemetry",
    "Tracer",
    "drain",
    "flush_push",
]
