"""TCP front end for the metrics service.

A connection either streams METRIC lines (acknowledged with a bare
``END`` once the sender closes its side), or opens with one
request line and reads the reply up to ``END``:

    QUERY <json>   {"name", "filter", "start", "end", "aggregate", "group_by", "step"}
    VIEW <json>    {"view", "target", "start", "end"}
    BOUNDS         first and last stored timestamp
"""

from __future__ import annotations

import json
import threading
from typing import Sequence

from ..model import format_float
from ..net import LineServer
from .query import EmptyRange, UnknownMetric
from .service import DEFAULT_SCRAPE_INTERVAL_S, MetricsService
from .views import MissingInstrument


class MetricsServer(LineServer):
    def __init__(
        self,
        service: MetricsService,
        address: tuple[str, int] = ("127.0.0.1", 0),
        targets: Sequence[tuple[str, int]] = (),
        scrape_interval_s: float = DEFAULT_SCRAPE_INTERVAL_S,
    ) -> None:
        self.service = service
        self.targets = list(targets)
        self.scrape_interval_s = scrape_interval_s
        self._stop = threading.Event()
        self._loop: threading.Thread | None = None
        super().__init__(self._handle, address)

    def _handle(self, first: str, rest):
        verb, _, arg = first.partition(" ")
        try:
            if verb == "QUERY":
                q = json.loads(arg)
                rows = self.service.query_range(
                    q["name"], q.get("filter"), q["start"], q["end"], q.get("aggregate", "avg"),
                    q.get("group_by", ()), q.get("step"),
                )
                return [json.dumps([list(r.group.items), r.timestamp, format_float(r.value)]) for r in rows]
            if verb == "VIEW":
                q = json.loads(arg)
                t = self.service.derived_view(q["view"], q["target"], q["start"], q["end"])
                return [json.dumps({"name": t.name, "columns": t.columns})] + [
                    json.dumps(list(row)) for row in t.rows
                ]
            if verb == "BOUNDS":
                b = self.service.time_bounds()
                return [json.dumps(b)]
        except (UnknownMetric, MissingInstrument, EmptyRange, ValueError, KeyError) as e:
            return [f"error: {e}"]
        self.service.ingest_push([first])
        self.service.ingest_push(rest)
        return []  # bare END acknowledges the stream

    def _run(self) -> None:
        while not self._stop.wait(self.scrape_interval_s):
            for t in self.targets:
                self.service.scrape_target(t)
            self.service.downsample()

    def start(self) -> MetricsServer:
        super().start()
        self._loop = threading.Thread(target=self._run, daemon=True)
        self._loop.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._loop is not None:
            self._loop.join()
        super().stop()
