"""Where CLI commands get their data: a local corpus or running services."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping

from ..collector import NotFound, TraceCollector, TraceFilter, TraceStore, TraceSummary, TraceTree
from ..collector.server import NOT_FOUND, filter_to_json, summary_from_json
from ..collector.store import tree_from_batch
from ..metrics_service import MetricsService, MissingInstrument, Row, UnknownMetric, ViewTable
from ..model import TagSet, TraceId, parse_float
from ..net import request
from ..sim import TelemetryCorpus


class BackendError(RuntimeError):
    """A remote service answered with an error line."""


class LocalTraces:
    """Traces from a simulated corpus directory or a collector store file."""

    def __init__(self, path: str | Path) -> None:
        path = Path(path)
        if path.is_dir():
            corpus = TelemetryCorpus.read(path)
            collector = TraceCollector()
            collector.ingest_many(corpus.spans + corpus.logs, now=0.0)
            collector.flush()
            self.store = collector.store
        else:
            self.store = TraceStore(path)

    def get(self, trace_id: TraceId) -> TraceTree:
        return self.store.get(trace_id)

    def search(self, flt: TraceFilter) -> list[TraceSummary]:
        return self.store.query(flt)


class RemoteTraces:
    def __init__(self, address: tuple[str, int]) -> None:
        self.address = address

    def get(self, trace_id: TraceId) -> TraceTree:
        lines = request(self.address, [f"GET {trace_id.hex}"])
        if lines == [NOT_FOUND]:
            raise NotFound(trace_id.hex)
        return tree_from_batch(lines)

    def search(self, flt: TraceFilter) -> list[TraceSummary]:
        lines = request(self.address, [f"SEARCH {filter_to_json(flt)}"])
        return [summary_from_json(line) for line in lines if line]


class LocalMetrics:
    def __init__(self, path: str | Path) -> None:
        path = Path(path)
        self.service = MetricsService()
        lines = TelemetryCorpus.read(path).metrics if path.is_dir() else path.read_text().splitlines()
        self.service.ingest_push(lines)

    def query(self, name, tag_filter, start, end, aggregate, group_by, step) -> list[Row]:
        return self.service.query_range(name, tag_filter, start, end, aggregate, group_by, step)

    def view(self, view: str, target: str, start: int, end: int) -> ViewTable:
        return self.service.derived_view(view, target, start, end)

    def bounds(self) -> tuple[int, int] | None:
        return self.service.time_bounds()


def _check(lines: list[str]) -> list[str]:
    if lines and lines[0].startswith("error: "):
        msg = lines[0][len("error: "):]
        if msg.startswith("unknown metric: "):
            raise UnknownMetric(msg[len("unknown metric: "):])
        if msg.startswith("missing instrument: "):
            raise MissingInstrument(msg[len("missing instrument: "):].split(" for ")[0])
        raise BackendError(msg)
    return lines


class RemoteMetrics:
    def __init__(self, address: tuple[str, int]) -> None:
        self.address = address

    def _call(self, verb: str, body: Mapping | None = None) -> list[str]:
        line = verb if body is None else f"{verb} {json.dumps(body, sort_keys=True)}"
        return _check(request(self.address, [line]))

    def query(self, name, tag_filter, start, end, aggregate, group_by, step) -> list[Row]:
        body = {
            "name": name,
            "filter": dict(tag_filter or {}),
            "start": start,
            "end": end,
            "aggregate": str(aggregate),
            "group_by": list(group_by),
            "step": step,
        }
        rows = []
        for line in self._call("QUERY", body):
            group, ts, value = json.loads(line)
            rows.append(Row(TagSet.of([tuple(kv) for kv in group]), ts, parse_float(value)))
        return rows

    def view(self, view: str, target: str, start: int, end: int) -> ViewTable:
        lines = self._call("VIEW", {"view": view, "target": target, "start": start, "end": end})
        head = json.loads(lines[0])
        return ViewTable(head["name"], tuple(head["columns"]), [tuple(json.loads(line)) for line in lines[1:]])

    def bounds(self) -> tuple[int, int] | None:
        b = json.loads(self._call("BOUNDS")[0])
        return None if b is None else (b[0], b[1])


def parse_tag_filters(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        k, sep, v = item.partition("=")
        if not sep or not k:
            raise ValueError(f"expected key=value, got {item!r}")
        out[k] = v
    return out
