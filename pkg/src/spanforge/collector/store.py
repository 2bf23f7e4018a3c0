"""Trace storage: an in-memory index with an optional append-only file.

The file holds one batch per trace: a ``TRACE <trace_id> <flags|->`` header,
the trace's original SPAN and LOG lines, and a blank line. Reloading
re-assembles and re-adjusts each batch, which reproduces the stored tree.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..model import Status, TraceId, decode_line, encode_log, encode_span
from .tree import Anomaly, TraceTree, adjust_clock_skew, assemble


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class TraceSummary:
    trace_id: TraceId
    service: str
    operation: str
    start: int
    duration: int
    span_count: int
    error: bool


@dataclass
class TraceFilter:
    """Conjunctive trace filter; unset fields match everything.

    ``service``/``operation``/``tags`` match when any span of the trace
    matches; ``min_duration`` and the ``start``/``end`` range apply to the
    root.
    """

    service: str | None = None
    operation: str | None = None
    status: Status | None = None
    min_duration: int | None = None
    tags: dict[str, str] = field(default_factory=dict)
    start: int | None = None
    end: int | None = None

    def matches(self, tree: TraceTree) -> bool:
        spans = tree.spans()
        if self.service is not None and not any(s.service == self.service for s in spans):
            return False
        if self.operation is not None and not any(s.operation == self.operation for s in spans):
            return False
        if self.status is not None and tree.has_error != (self.status is Status.ERROR):
            return False
        if self.min_duration is not None and tree.duration < self.min_duration:
            return False
        for k, v in self.tags.items():
            if not any(s.tags.get(k) == v for s in spans):
                return False
        if self.start is not None and tree.start < self.start:
            return False
        if self.end is not None and tree.start >= self.end:
            return False
        return True


def summarize(tree: TraceTree) -> TraceSummary:
    return TraceSummary(
        tree.trace_id,
        tree.root.service,
        tree.root.operation,
        tree.start,
        tree.duration,
        tree.span_count,
        tree.has_error,
    )


def batch_lines(tree: TraceTree) -> list[str]:
    flags = ",".join(sorted(a.value for a in tree.anomalies if a is Anomaly.DUPLICATE_SPAN_ID)) or "-"
    lines = [f"TRACE {tree.trace_id.hex} {flags}"]
    lines += [encode_span(s) for s in sorted(tree.spans(), key=lambda s: (s.start, s.span_id.value))]
    lines += [encode_log(r) for r in tree.logs()]
    return lines


def tree_from_batch(lines: Iterable[str]) -> TraceTree:
    it = iter(lines)
    header = next(it).split(" ")
    if len(header) != 3 or header[0] != "TRACE":
        raise ValueError(f"bad batch header {' '.join(header)!r}")
    spans, logs = [], []
    for line in it:
        rec = decode_line(line)
        (spans if line.startswith("SPAN") else logs).append(rec)
    dup = 1 if Anomaly.DUPLICATE_SPAN_ID.value in header[2].split(",") else 0
    return adjust_clock_skew(assemble(spans, logs, duplicates=dup))


class TraceStore:
    """One writer, many readers; reads see whole traces only."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._traces: dict[TraceId, TraceTree] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for tree in self._read_batches(self.path):
                self._traces[tree.trace_id] = tree

    @staticmethod
    def _read_batches(path: Path) -> Iterable[TraceTree]:
        batch: list[str] = []
        for line in path.read_text().split("\n"):
            if line:
                batch.append(line)
            elif batch:
                yield tree_from_batch(batch)
                batch = []
        if batch:
            yield tree_from_batch(batch)

    def put(self, tree: TraceTree) -> None:
        with self._lock:
            self._traces[tree.trace_id] = tree
            if self.path is not None:
                with self.path.open("a") as f:
                    f.write("\n".join(batch_lines(tree)) + "\n\n")

    def get(self, trace_id: TraceId) -> TraceTree:
        try:
            return self._traces[trace_id]
        except KeyError:
            raise NotFound(trace_id.hex) from None

    def __contains__(self, trace_id: TraceId) -> bool:
        return trace_id in self._traces

    def __len__(self) -> int:
        return len(self._traces)

    def trees(self) -> list[TraceTree]:
        with self._lock:
            return list(self._traces.values())

    def query(self, flt: TraceFilter | None = None) -> list[TraceSummary]:
        """Matching traces, newest root start first."""
        flt = flt or TraceFilter()
        hits = [summarize(t) for t in self.trees() if flt.matches(t)]
        hits.sort(key=lambda s: (-s.start, s.trace_id.value))
        return hits
