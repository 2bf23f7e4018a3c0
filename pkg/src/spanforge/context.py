"""Trace context creation and header propagation.

Contexts are passed explicitly through the SDK API rather than kept in
thread-local state, so nothing is lost when work hops between threads or
tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, MutableMapping

from .model import IdSource, SpanId, TraceId

TRACE_ID_HEADER = "trace-id"
PARENT_SPAN_HEADER = "parent-span-id"
SAMPLED_HEADER = "sampled"
HEADERS = (TRACE_ID_HEADER, PARENT_SPAN_HEADER, SAMPLED_HEADER)


class MalformedContext(ValueError):
    """Carrier holds a partial or unparsable context.

    Callers should log it and start a new root rather than fail the request.
    """


@dataclass(frozen=True)
class TraceContext:
    trace_id: TraceId
    parent_span_id: SpanId
    sampled: bool = True

    def child(self, span_id: SpanId) -> TraceContext:
        """Context handed downstream by the span ``span_id``."""
        return TraceContext(self.trace_id, span_id, self.sampled)


def new_root_context(ids: IdSource, head_decision: bool) -> TraceContext:
    """Fresh trace whose ``parent_span_id`` is the id the root span will use."""
    return TraceContext(ids.trace_id(), ids.span_id(), bool(head_decision))


def inject(ctx: TraceContext, carrier: MutableMapping[str, str]) -> None:
    carrier[TRACE_ID_HEADER] = ctx.trace_id.hex
    carrier[PARENT_SPAN_HEADER] = ctx.parent_span_id.hex
    carrier[SAMPLED_HEADER] = "1" if ctx.sampled else "0"


def extract(carrier: Mapping[str, str]) -> TraceContext | None:
    """Read a context from ``carrier``.

    Returns None when none of the headers are present. Raises
    :class:`MalformedContext` when only some are, or when a value does not
    parse.
    """
    present = [h for h in HEADERS if h in carrier]
    if not present:
        return None
    if len(present) != len(HEADERS):
        missing = ", ".join(h for h in HEADERS if h not in carrier)
        raise MalformedContext(f"partial trace context, missing {missing}")
    sampled = carrier[SAMPLED_HEADER]
    if sampled not in ("0", "1"):
        raise MalformedContext(f"bad sampled flag {sampled!r}")
    try:
        return TraceContext(
            TraceId.from_hex(carrier[TRACE_ID_HEADER]),
            SpanId.from_hex(carrier[PARENT_SPAN_HEADER]),
            sampled == "1",
        )
    except ValueError as e:
        raise MalformedContext(str(e)) from None
