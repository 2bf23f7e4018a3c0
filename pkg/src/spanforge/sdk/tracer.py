from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

from ..clock import Clock, system_clock
from ..context import TraceContext, new_root_context
from ..model import (
    IdSource,
    Level,
    LogRecord,
    Span,
    SpanId,
    Status,
    TagSet,
    TraceId,
    encode_log,
    encode_span,
)
from .config import SdkConfig
from .export import ExportBuffer

CLOCK_ANOMALY_TAG = "clock.anomaly"


class DoubleFinish(UserWarning):
    """finish_span was called on a span that already finished."""


@dataclass
class ActiveSpan:
    context: TraceContext  # what downstream calls receive
    span_id: SpanId
    parent_span_id: SpanId | None
    service: str
    operation: str
    start: int
    tags: dict[str, str] = field(default_factory=dict)
    status: Status = Status.OK
    finished: Span | None = None

    @property
    def trace_id(self) -> TraceId:
        return self.context.trace_id

    @property
    def sampled(self) -> bool:
        return self.context.sampled

    def set_tag(self, key: str, value: str) -> None:
        self.tags[key] = str(value)


class Tracer:
    """Starts and finishes spans for one service and queues them for export.

    ``head_sampler`` decides whether a new root trace is recorded; contexts
    received from upstream keep their sampled flag.
    """

    def __init__(
        self,
        config: SdkConfig,
        buffer: ExportBuffer,
        clock: Clock = system_clock,
        ids: IdSource | None = None,
        head_sampler: Callable[[TraceId], bool] | None = None,
    ) -> None:
        self.config = config
        self.buffer = buffer
        self.clock = clock
        self.ids = ids or IdSource()
        self.head_sampler = head_sampler
        self._resource = config.resource_tags()

    def start_span(
        self,
        parent: TraceContext | None,
        operation: str,
        tags: Mapping[str, str] | None = None,
    ) -> tuple[ActiveSpan, TraceContext]:
        if not operation:
            raise ValueError("operation must be nonempty")
        if parent is None:
            ctx = new_root_context(self.ids, True)
            if self.head_sampler is not None:
                ctx = TraceContext(ctx.trace_id, ctx.parent_span_id, bool(self.head_sampler(ctx.trace_id)))
            span_id, parent_id, downstream = ctx.parent_span_id, None, ctx
        else:
            span_id = self.ids.span_id()
            parent_id = parent.parent_span_id
            downstream = parent.child(span_id)
        span = ActiveSpan(
            context=downstream,
            span_id=span_id,
            parent_span_id=parent_id,
            service=self.config.service_name,
            operation=operation,
            start=self.clock(),
            tags=dict(tags or {}),
        )
        return span, downstream

    def finish_span(self, span: ActiveSpan, status: Status | None = None) -> Span:
        if span.finished is not None:
            warnings.warn(f"span {span.span_id} finished twice", DoubleFinish, stacklevel=2)
            return span.finished
        if status is not None:
            span.status = status
        end = self.clock()
        tags = dict(self._resource)
        tags.update(span.tags)
        duration = end - span.start
        if duration < 0:
            duration = 0
            tags[CLOCK_ANOMALY_TAG] = "true"
        done = Span(
            trace_id=span.trace_id,
            span_id=span.span_id,
            parent_span_id=span.parent_span_id,
            service=span.service,
            operation=span.operation,
            start=span.start,
            duration=duration,
            status=span.status,
            tags=TagSet.of(tags),
        )
        span.finished = done
        if span.sampled:
            self.buffer.offer(encode_span(done))
        return done

    def log(self, span: ActiveSpan, level: Level, message: str) -> LogRecord:
        rec = LogRecord(span.trace_id, span.span_id, self.clock(), Level(level), message)
        if span.sampled:
            self.buffer.offer(encode_log(rec))
        return rec
