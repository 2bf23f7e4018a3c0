"""Execution trace reconstruction from parent links, and clock-skew repair."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

from ..model import LogRecord, Span, SpanId, Status, TraceId

SYNTHETIC_SERVICE = "(missing)"
SYNTHETIC_OPERATION = "(root)"


class EmptyTrace(ValueError):
    pass


class Anomaly(str, Enum):
    ORPHANED_SPANS = "orphaned_spans"
    CHILD_LONGER_THAN_PARENT = "child_longer_than_parent"
    CLOCK_ADJUSTED = "clock_adjusted"
    DUPLICATE_SPAN_ID = "duplicate_span_id"


@dataclass
class SpanNode:
    span: Span | None  # None only for the synthetic root
    start: int  # adjusted start; equals span.start until skew repair moves it
    duration: int
    children: list[SpanNode] = field(default_factory=list)
    logs: list[LogRecord] = field(default_factory=list)
    flags: set[Anomaly] = field(default_factory=set)

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def original_start(self) -> int:
        return self.span.start if self.span is not None else self.start

    @property
    def synthetic(self) -> bool:
        return self.span is None

    @property
    def service(self) -> str:
        return self.span.service if self.span is not None else SYNTHETIC_SERVICE

    @property
    def operation(self) -> str:
        return self.span.operation if self.span is not None else SYNTHETIC_OPERATION

    @property
    def span_id(self) -> SpanId | None:
        return self.span.span_id if self.span is not None else None

    @property
    def is_error(self) -> bool:
        return self.span is not None and self.span.status is Status.ERROR

    def sort_key(self) -> tuple:
        return (self.start, self.span_id.value if self.span is not None else -1)


@dataclass
class TraceTree:
    trace_id: TraceId
    root: SpanNode
    anomalies: set[Anomaly] = field(default_factory=set)
    unattached_logs: int = 0

    def walk(self) -> Iterator[tuple[SpanNode, int]]:
        """Pre-order (node, depth), children in start order."""
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            yield node, depth
            stack.extend((c, depth + 1) for c in reversed(node.children))

    def nodes(self) -> list[SpanNode]:
        return [n for n, _ in self.walk()]

    def spans(self) -> list[Span]:
        return [n.span for n, _ in self.walk() if n.span is not None]

    def logs(self) -> list[LogRecord]:
        return [rec for n, _ in self.walk() for rec in n.logs]

    def find(self, span_id: SpanId) -> SpanNode | None:
        for n, _ in self.walk():
            if n.span_id == span_id:
                return n
        return None

    @property
    def span_count(self) -> int:
        return sum(1 for n, _ in self.walk() if n.span is not None)

    @property
    def has_error(self) -> bool:
        return any(n.is_error for n, _ in self.walk())

    @property
    def duration(self) -> int:
        return self.root.duration

    @property
    def start(self) -> int:
        return self.root.start


def _log_key(rec: LogRecord) -> tuple:
    return (rec.timestamp, rec.span_id.value, rec.level.value, rec.message)


def assemble(spans: Iterable[Span], logs: Iterable[LogRecord] = (), duplicates: int = 0) -> TraceTree:
    """Build the trace tree from parent links.

    Spans whose parent never arrived, extra parentless spans, and members of
    parent-link cycles hang under a synthetic root covering all spans; the
    tree is then flagged ``orphaned_spans``. Logs whose span is unknown go to
    the root and are counted in ``unattached_logs``. The result does not
    depend on input order, except which of two conflicting spans sharing an
    id is kept (the first).
    """
    by_id: dict[SpanId, Span] = {}
    anomalies: set[Anomaly] = set()
    if duplicates:
        anomalies.add(Anomaly.DUPLICATE_SPAN_ID)
    trace_id = None
    for s in spans:
        if trace_id is None:
            trace_id = s.trace_id
        elif s.trace_id != trace_id:
            raise ValueError("spans belong to different traces")
        if s.span_id in by_id:
            anomalies.add(Anomaly.DUPLICATE_SPAN_ID)
            continue
        by_id[s.span_id] = s
    if trace_id is None:
        raise EmptyTrace("trace has no spans")

    nodes = {sid: SpanNode(s, s.start, s.duration) for sid, s in by_id.items()}
    parent_of: dict[SpanId, SpanId] = {}
    top: list[SpanId] = []
    for sid, s in by_id.items():
        if s.parent_span_id is not None and s.parent_span_id in nodes:
            parent_of[sid] = s.parent_span_id
        else:
            top.append(sid)

    # spans caught in parent-link cycles are unreachable from any top node;
    # cut each cycle at its earliest span
    unreachable = set(nodes) - _reachable(top, parent_of)
    while unreachable:
        cut = min(unreachable, key=lambda sid: (by_id[sid].start, sid.value))
        del parent_of[cut]
        top.append(cut)
        unreachable -= _reachable([cut], parent_of)

    for sid, pid in parent_of.items():
        nodes[pid].children.append(nodes[sid])
    for n in nodes.values():
        n.children.sort(key=SpanNode.sort_key)

    if len(top) == 1:
        root = nodes[top[0]]
    else:
        anomalies.add(Anomaly.ORPHANED_SPANS)
        lo = min(s.start for s in by_id.values())
        hi = max(s.end for s in by_id.values())
        root = SpanNode(None, lo, hi - lo)
        root.children = sorted((nodes[sid] for sid in top), key=SpanNode.sort_key)

    unattached = 0
    for rec in logs:
        if rec.trace_id != trace_id:
            raise ValueError("log belongs to a different trace")
        target = nodes.get(rec.span_id)
        if target is None:
            target = root
            unattached += 1
        target.logs.append(rec)
    for n in nodes.values():
        n.logs.sort(key=_log_key)
    root.logs.sort(key=_log_key)
    return TraceTree(trace_id, root, anomalies, unattached)


def _reachable(starts: Iterable[SpanId], parent_of: dict[SpanId, SpanId]) -> set[SpanId]:
    children: dict[SpanId, list[SpanId]] = {}
    for c, p in parent_of.items():
        children.setdefault(p, []).append(c)
    seen: set[SpanId] = set()
    stack = list(starts)
    while stack:
        sid = stack.pop()
        if sid in seen:
            continue
        seen.add(sid)
        stack.extend(children.get(sid, ()))
    return seen


def adjust_clock_skew(tree: TraceTree) -> TraceTree:
    """Return a copy with cross-service children moved inside their parents.

    For each edge that crosses a service boundary where the child interval
    sticks out of the parent's, the child is centred in the parent when it
    fits (``slack = parent.duration - child.duration >= 0``); the shift
    carries along the child's same-service descendants. Children longer than
    their parent are left alone and flagged. Edges are visited top-down, so
    each check sees the parent's already corrected position. Original
    timestamps stay on ``node.span``.
    """
    out = copy.deepcopy(tree)
    stack = [out.root]
    while stack:
        parent = stack.pop()
        for child in parent.children:
            if parent.synthetic or child.service == parent.service:
                continue
            if parent.start <= child.start and child.end <= parent.end:
                continue
            slack = parent.duration - child.duration
            if slack < 0:
                child.flags.add(Anomaly.CHILD_LONGER_THAN_PARENT)
                out.anomalies.add(Anomaly.CHILD_LONGER_THAN_PARENT)
                continue
            delta = parent.start + slack // 2 - child.start
            _shift_same_service(child, delta)
            child.flags.add(Anomaly.CLOCK_ADJUSTED)
            out.anomalies.add(Anomaly.CLOCK_ADJUSTED)
        parent.children.sort(key=SpanNode.sort_key)
        stack.extend(parent.children)
    return out


def _shift_same_service(node: SpanNode, delta: int) -> None:
    service = node.service
    stack = [node]
    while stack:
        n = stack.pop()
        n.start += delta
        stack.extend(c for c in n.children if c.service == service)
