from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping

from ..clock import Clock, system_clock
from ..exposition import parse_exposition
from ..model import MalformedLine, MetricKind, MetricSample, TagSet, decode_metric
from ..net import END
from ..sdk import SCRAPE_REQUEST
from .query import Aggregate, Row, query_range
from .store import SeriesStore
from .views import ViewTable, derived_view

log = logging.getLogger(__name__)

DEFAULT_SCRAPE_INTERVAL_S = 10
_COUNTER_SUFFIXES = ("_total", "_bucket", "_sum", "_count")


class TargetUnreachable(ConnectionError):
    pass


@dataclass
class IngestCounts:
    accepted: int = 0
    malformed: int = 0
    overflowed: int = 0

    def __iadd__(self, other: IngestCounts) -> IngestCounts:
        self.accepted += other.accepted
        self.malformed += other.malformed
        self.overflowed += other.overflowed
        return self


def scraped_kind(name: str) -> MetricKind:
    """The exposition body carries no types; counters are recognised by the
    suffixes the SDK emits for them."""
    return MetricKind.COUNTER if name.endswith(_COUNTER_SUFFIXES) else MetricKind.GAUGE


def fetch_scrape(address: tuple[str, int], timeout: float = 5.0) -> str:
    try:
        with socket.create_connection(address, timeout=timeout) as sock:
            sock.sendall((SCRAPE_REQUEST + "\n").encode())
            f = sock.makefile("r", encoding="utf-8", newline="\n")
            lines = []
            for line in f:
                line = line.rstrip("\n")
                if line == END:
                    return "".join(l + "\n" for l in lines)
                lines.append(line)
    except OSError as e:
        raise TargetUnreachable(f"{address[0]}:{address[1]}: {e}") from e
    raise TargetUnreachable(f"{address[0]}:{address[1]}: reply ended without END")


class MetricsService:
    """Push ingestion, pull scraping, downsampling and queries over one
    :class:`SeriesStore`.

    Scrape health is recorded in the store itself as ``up{target}`` and
    ``scrape_failures_total{target}``.
    """

    def __init__(self, store: SeriesStore | None = None, clock: Clock = system_clock) -> None:
        self.store = store if store is not None else SeriesStore()
        self.clock = clock
        self.totals = IngestCounts()
        self._failures: dict[str, int] = {}
        self._lock = threading.Lock()

    def _now_ms(self) -> int:
        return self.clock() // 1000

    def ingest_sample(self, sample: MetricSample) -> bool:
        """Write one sample; True if it landed in an overflow series."""
        return self.store.write(sample).overflowed

    def ingest_push(self, lines: Iterable[str]) -> IngestCounts:
        counts = IngestCounts()
        for line in lines:
            if not line:
                continue
            try:
                sample = decode_metric(line)
            except MalformedLine:
                counts.malformed += 1
                continue
            counts.accepted += 1
            if self.ingest_sample(sample):
                counts.overflowed += 1
        with self._lock:
            self.totals += counts
        return counts

    def ingest_exposition(self, body: str, now_ms: int | None = None) -> int:
        now_ms = self._now_ms() if now_ms is None else now_ms
        n = 0
        for series in parse_exposition(body):
            ts = series.timestamp if series.timestamp is not None else now_ms
            self.ingest_sample(MetricSample(series.name, scraped_kind(series.name), series.value, ts, series.tags))
            n += 1
        return n

    def scrape_target(self, address: tuple[str, int], now_ms: int | None = None, timeout: float = 5.0) -> int:
        """Scrape one target; failures are recorded, not raised."""
        now_ms = self._now_ms() if now_ms is None else now_ms
        target = f"{address[0]}:{address[1]}"
        tags = TagSet.of(target=target)
        try:
            n = self.ingest_exposition(fetch_scrape(address, timeout), now_ms)
        except (TargetUnreachable, MalformedLine) as e:
            log.warning("scrape of %s failed: %s", target, e)
            with self._lock:
                self._failures[target] = self._failures.get(target, 0) + 1
                failures = self._failures[target]
            self.ingest_sample(MetricSample("scrape_failures_total", MetricKind.COUNTER, float(failures), now_ms, tags))
            self.ingest_sample(MetricSample("up", MetricKind.GAUGE, 0.0, now_ms, tags))
            return 0
        self.ingest_sample(MetricSample("up", MetricKind.GAUGE, 1.0, now_ms, tags))
        return n

    def scrape_failures(self, address: tuple[str, int]) -> int:
        return self._failures.get(f"{address[0]}:{address[1]}", 0)

    def downsample(self, now_ms: int | None = None) -> list[int]:
        return self.store.downsample(self._now_ms() if now_ms is None else now_ms)

    def query_range(
        self,
        name: str,
        tag_filter: Mapping[str, str] | None,
        start_ms: int,
        end_ms: int,
        aggregate: Aggregate | str = "avg",
        group_by: Iterable[str] = (),
        step_ms: int | None = None,
    ) -> list[Row]:
        return query_range(self.store, name, tag_filter, start_ms, end_ms, aggregate, group_by, step_ms)

    def derived_view(self, view: str, target: str, start_ms: int, end_ms: int) -> ViewTable:
        return derived_view(self.store, view, target, start_ms, end_ms)

    def time_bounds(self) -> tuple[int, int] | None:
        """[first, last] timestamp over all stored points."""
        lo = hi = None
        for s in self.store.series():
            pts = s.points(self.store.tiers)
            if pts:
                lo = pts[0][0] if lo is None else min(lo, pts[0][0])
                hi = pts[-1][0] if hi is None else max(hi, pts[-1][0])
        return None if lo is None else (lo, hi)
