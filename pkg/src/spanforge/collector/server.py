"""TCP front end for the collector.

A connection either streams SPAN/LOG lines (acknowledged with a bare
``END`` once the sender closes its side), or opens with one
query line and reads the reply up to ``END``:

    GET <trace_id>        stored batch lines, or ``error: trace not found``
    SEARCH <json filter>  one JSON summary per line, newest first
"""

from __future__ import annotations

import json
import threading

from ..model import Status, TraceId
from ..net import LineServer
from .collector import TraceCollector
from .store import NotFound, TraceFilter, TraceSummary, batch_lines

NOT_FOUND = "error: trace not found"


def filter_to_json(flt: TraceFilter) -> str:
    d = {k: v for k, v in vars(flt).items() if v is not None and v != {}}
    if flt.status is not None:
        d["status"] = flt.status.value
    return json.dumps(d, sort_keys=True)


def filter_from_json(text: str) -> TraceFilter:
    d = json.loads(text) if text.strip() else {}
    if "status" in d:
        d["status"] = Status(d["status"])
    return TraceFilter(**d)


def summary_to_json(s: TraceSummary) -> str:
    return json.dumps(
        {
            "trace_id": s.trace_id.hex,
            "service": s.service,
            "operation": s.operation,
            "start": s.start,
            "duration": s.duration,
            "span_count": s.span_count,
            "error": s.error,
        },
        sort_keys=True,
    )


def summary_from_json(text: str) -> TraceSummary:
    d = json.loads(text)
    d["trace_id"] = TraceId.from_hex(d["trace_id"])
    return TraceSummary(**d)


class CollectorServer(LineServer):
    def __init__(self, collector: TraceCollector, address: tuple[str, int] = ("127.0.0.1", 0), tick_s: float = 1.0) -> None:
        self.collector = collector
        self.tick_s = tick_s
        self._stop = threading.Event()
        self._ticker: threading.Thread | None = None
        super().__init__(self._handle, address)

    def _handle(self, first: str, rest):
        verb, _, arg = first.partition(" ")
        if verb == "GET":
            try:
                return batch_lines(self.collector.store.get(TraceId.from_hex(arg.strip())))
            except (NotFound, ValueError):
                return [NOT_FOUND]
        if verb == "SEARCH":
            return [summary_to_json(s) for s in self.collector.store.query(filter_from_json(arg))]
        self.collector.ingest(first)
        for line in rest:
            if line:
                self.collector.ingest(line)
        return []  # bare END acknowledges the stream

    def _tick(self) -> None:
        while not self._stop.wait(self.tick_s):
            self.collector.process()

    def start(self) -> CollectorServer:
        super().start()
        self._ticker = threading.Thread(target=self._tick, daemon=True)
        self._ticker.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._ticker is not None:
            self._ticker.join()
        super().stop()
        self.collector.flush()
