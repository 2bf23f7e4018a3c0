from __future__ import annotations

import logging
import threading
import time
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from ..model import LogRecord, MalformedLine, Span, SpanId, TraceId, decode_line
from ..sampling import SamplingPolicy, SamplingStats, tail_decide
from .store import TraceStore
from .tree import EmptyTrace, TraceTree, adjust_clock_skew, assemble

log = logging.getLogger(__name__)

DEFAULT_IDLE_TIMEOUT_S = 5.0
DEFAULT_MAX_WAIT_S = 30.0
_COMPLETED_MEMORY = 100_000


class Ingest(str, Enum):
    ACCEPTED = "accepted"
    MALFORMED = "malformed"
    DUPLICATE = "duplicate"
    LATE = "late"
    UNSUPPORTED = "unsupported"


@dataclass
class PendingTrace:
    trace_id: TraceId
    created: float
    last_arrival: float
    spans: dict[SpanId, Span] = field(default_factory=dict)
    logs: list[LogRecord] = field(default_factory=list)
    duplicates: int = 0


class TraceCollector:
    """Collects SPAN/LOG lines into pending traces and turns completed ones
    into sampled, skew-adjusted trees.

    A pending trace completes once it has been idle for ``idle_timeout_s`` or
    has existed for ``max_wait_s``. Lines for a trace that already completed
    are dropped as late.
    """

    def __init__(
        self,
        idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
        max_wait_s: float = DEFAULT_MAX_WAIT_S,
        policy: SamplingPolicy | None = None,
        store: TraceStore | None = None,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.idle_timeout_s = idle_timeout_s
        self.max_wait_s = max_wait_s
        self.policy = policy or SamplingPolicy.keep_all()
        self.store = store if store is not None else TraceStore()
        self.clock = clock
        self.counters: Counter = Counter()
        self.sampling = SamplingStats()
        self._pending: dict[TraceId, PendingTrace] = {}
        self._completed: OrderedDict[TraceId, None] = OrderedDict()
        self._lock = threading.Lock()

    def ingest(self, line: str, now: float | None = None) -> Ingest:
        now = self.clock() if now is None else now
        try:
            rec = decode_line(line)
        except MalformedLine as e:
            self.counters["malformed"] += 1
            log.debug("dropping malformed line: %s", e)
            return Ingest.MALFORMED
        if not isinstance(rec, (Span, LogRecord)):
            self.counters["unsupported"] += 1
            return Ingest.UNSUPPORTED
        with self._lock:
            if rec.trace_id in self._completed:
                self.counters["late"] += 1
                return Ingest.LATE
            p = self._pending.get(rec.trace_id)
            if p is None:
                p = self._pending[rec.trace_id] = PendingTrace(rec.trace_id, now, now)
            p.last_arrival = now
            if isinstance(rec, Span):
                if rec.span_id in p.spans:
                    p.duplicates += 1
                    self.counters["duplicate"] += 1
                    return Ingest.DUPLICATE
                p.spans[rec.span_id] = rec
                self.counters["spans"] += 1
            else:
                p.logs.append(rec)
                self.counters["logs"] += 1
        return Ingest.ACCEPTED

    def ingest_many(self, lines: Iterable[str], now: float | None = None) -> Counter:
        out: Counter = Counter()
        for line in lines:
            if line:
                out[self.ingest(line, now)] += 1
        return out

    def pending_count(self) -> int:
        return len(self._pending)

    def pending_size(self, trace_id: TraceId) -> int:
        p = self._pending.get(trace_id)
        return len(p.spans) + len(p.logs) if p else 0

    def complete_pending(self, now: float | None = None, force: bool = False) -> list[PendingTrace]:
        now = self.clock() if now is None else now
        with self._lock:
            done = [
                p
                for p in self._pending.values()
                if force or now - p.last_arrival >= self.idle_timeout_s or now - p.created >= self.max_wait_s
            ]
            for p in done:
                del self._pending[p.trace_id]
                self._completed[p.trace_id] = None
            while len(self._completed) > _COMPLETED_MEMORY:
                self._completed.popitem(last=False)
        done.sort(key=lambda p: p.trace_id.value)
        return done

    def build(self, pending: PendingTrace) -> TraceTree:
        tree = assemble(pending.spans.values(), pending.logs, pending.duplicates)
        return adjust_clock_skew(tree)

    def process(self, now: float | None = None, force: bool = False) -> list[TraceTree]:
        """Complete due traces, sample them, and store the retained ones."""
        kept = []
        for p in self.complete_pending(now, force):
            try:
                tree = self.build(p)
            except EmptyTrace:
                self.counters["logs_without_spans"] += len(p.logs)
                continue
            action, reason = tail_decide(self.policy, tree)
            self.sampling.record(action, reason)
            if action.value == "keep":
                self.store.put(tree)
                kept.append(tree)
        return kept

    def flush(self) -> list[TraceTree]:
        """Complete every pending trace now (file import, shutdown)."""
        return self.process(force=True)
