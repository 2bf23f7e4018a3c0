"""Metric instruments and the registry that holds their state.

Series order in the scrape body is (instrument name, tag set). A histogram
emits its ``_bucket`` series in bound order followed by ``_sum`` and
``_count``.
"""

from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from ..clock import Clock, system_clock
from ..exposition import TAG_KEY, format_value, render_series
from ..model import MetricKind, MetricSample, TagSet, encode_metric
from .config import DEFAULT_HISTOGRAM_BOUNDS, normalize_bounds
from .export import ExportBuffer


class InstrumentKind(str, Enum):
    COUNTER = "counter"
    GAUGE = "gauge"
    HISTOGRAM = "histogram"


class KindMismatch(TypeError):
    pass


class NegativeCounterDelta(ValueError):
    pass


@dataclass(eq=False)
class Instrument:
    name: str
    kind: InstrumentKind
    static_tags: TagSet
    registry: Registry = field(repr=False)
    bounds: tuple[float, ...] = ()

    def add(self, delta: float = 1.0, tags: Mapping[str, str] | None = None) -> None:
        self.registry.counter_add(self, delta, tags)

    def set(self, value: float, tags: Mapping[str, str] | None = None) -> None:
        self.registry.gauge_set(self, value, tags)

    def observe(self, value: float, tags: Mapping[str, str] | None = None) -> None:
        self.registry.histogram_observe(self, value, tags)


@dataclass
class HistogramState:
    buckets: list[int]  # per-bucket, not cumulative
    sum: float = 0.0
    count: int = 0

    def cumulative(self) -> list[int]:
        out, acc = [], 0
        for c in self.buckets:
            acc += c
            out.append(acc)
        return out


class Registry:
    """Thread-safe instrument registry.

    When ``push_buffer`` is given, every write also queues a METRIC line:
    the new cumulative value for counters, the value for gauges, the raw
    observation for histograms.
    """

    def __init__(
        self,
        clock: Clock = system_clock,
        push_buffer: ExportBuffer | None = None,
        default_bounds: tuple[float, ...] = DEFAULT_HISTOGRAM_BOUNDS,
    ) -> None:
        self.clock = clock
        self.push_buffer = push_buffer
        self.default_bounds = normalize_bounds(default_bounds)
        self._instruments: dict[str, Instrument] = {}
        self._values: dict[Instrument, dict[TagSet, float | HistogramState]] = {}
        self._lock = threading.RLock()

    # registration

    def _register(self, name: str, kind: InstrumentKind, tags, bounds=()) -> Instrument:
        static = TagSet.of(tags)
        _check_keys(static)
        MetricSample(name, MetricKind.GAUGE, 0.0, 0, static)  # validates name and reserved keys
        with self._lock:
            existing = self._instruments.get(name)
            if existing is not None:
                if existing.kind is not kind or existing.static_tags != static or (bounds and existing.bounds != bounds):
                    raise ValueError(f"instrument {name!r} already registered differently")
                return existing
            instr = Instrument(name, kind, static, self, bounds)
            self._instruments[name] = instr
            self._values[instr] = {}
            return instr

    def counter(self, name: str, tags=None) -> Instrument:
        return self._register(name, InstrumentKind.COUNTER, tags)

    def gauge(self, name: str, tags=None) -> Instrument:
        return self._register(name, InstrumentKind.GAUGE, tags)

    def histogram(self, name: str, tags=None, bounds=None) -> Instrument:
        b = normalize_bounds(bounds) if bounds is not None else self.default_bounds
        return self._register(name, InstrumentKind.HISTOGRAM, tags, b)

    @property
    def instruments(self) -> list[Instrument]:
        return sorted(self._instruments.values(), key=lambda i: i.name)

    # writes

    def _series_tags(self, instr: Instrument, tags) -> TagSet:
        if not tags:
            return instr.static_tags
        extra = TagSet.of(tags)
        _check_keys(extra)
        return instr.static_tags.merge(extra)

    def _expect(self, instr: Instrument, kind: InstrumentKind) -> None:
        if instr.kind is not kind:
            raise KindMismatch(f"{instr.name} is a {instr.kind.value}, not a {kind.value}")
        if self._instruments.get(instr.name) is not instr:
            raise ValueError(f"{instr.name} belongs to another registry")

    def _push(self, instr: Instrument, kind: MetricKind, value: float, tags: TagSet) -> None:
        if self.push_buffer is not None:
            sample = MetricSample(instr.name, kind, value, self.clock() // 1000, tags)
            self.push_buffer.offer(encode_metric(sample))

    def counter_add(self, instr: Instrument, delta: float, tags=None) -> None:
        self._expect(instr, InstrumentKind.COUNTER)
        if not delta >= 0:
            raise NegativeCounterDelta(f"{instr.name}: counter delta must be >= 0, got {delta}")
        key = self._series_tags(instr, tags)
        with self._lock:
            series = self._values[instr]
            value = series.get(key, 0.0) + delta
            series[key] = value
            self._push(instr, MetricKind.COUNTER, value, key)

    def gauge_set(self, instr: Instrument, value: float, tags=None) -> None:
        self._expect(instr, InstrumentKind.GAUGE)
        key = self._series_tags(instr, tags)
        with self._lock:
            self._values[instr][key] = float(value)
            self._push(instr, MetricKind.GAUGE, float(value), key)

    def histogram_observe(self, instr: Instrument, value: float, tags=None) -> None:
        self._expect(instr, InstrumentKind.HISTOGRAM)
        key = self._series_tags(instr, tags)
        with self._lock:
            series = self._values[instr]
            state = series.get(key)
            if state is None:
                state = series[key] = HistogramState([0] * len(instr.bounds))
            state.buckets[bisect.bisect_left(instr.bounds, value)] += 1
            state.sum += value
            state.count += 1
            self._push(instr, MetricKind.HISTOGRAM_OBSERVATION, float(value), key)

    # reads

    def value(self, instr: Instrument | str, tags=None) -> float | HistogramState | None:
        if isinstance(instr, str):
            instr = self._instruments[instr]
        key = self._series_tags(instr, tags)
        with self._lock:
            return self._values[instr].get(key)

    def collect(self) -> list[tuple[str, TagSet, float]]:
        """Flattened (series name, tags, value) in exposition order."""
        out: list[tuple[str, TagSet, float]] = []
        with self._lock:
            for instr in self.instruments:
                series = self._values[instr]
                for tags in sorted(series):
                    v = series[tags]
                    if isinstance(v, HistogramState):
                        for bound, c in zip(instr.bounds, v.cumulative()):
                            out.append((f"{instr.name}_bucket", tags.merge({"le": format_value(bound)}), float(c)))
                        out.append((f"{instr.name}_sum", tags, v.sum))
                        out.append((f"{instr.name}_count", tags, float(v.count)))
                    else:
                        out.append((instr.name, tags, v))
        return out

    def expose_scrape(self, now_ms: int | None = None) -> str:
        ts = self.clock() // 1000 if now_ms is None else now_ms
        return "".join(render_series(name, tags, value, ts) + "\n" for name, tags, value in self.collect())


def _check_keys(tags: TagSet) -> None:
    for k, _ in tags:
        if not TAG_KEY.fullmatch(k):
            raise ValueError(f"bad tag key {k!r}")


class RedInstruments:
    """Request counter, error counter and duration histogram for one service.

    ``record`` always touches the error counter so that the series exists
    (at zero) before the first failure.
    """

    REQUESTS = "requests_total"
    ERRORS = "errors_total"
    DURATION = "request_duration_ms"

    def __init__(self, registry: Registry, service: str, node_label: str = "") -> None:
        tags = {"service": service}
        if node_label:
            tags["node.label"] = node_label
        self.requests = registry.counter(self.REQUESTS, tags)
        self.errors = registry.counter(self.ERRORS, tags)
        self.duration = registry.histogram(self.DURATION, tags)

    def record(self, operation: str, duration_ms: float, error: bool = False) -> None:
        tags = {"operation": operation}
        self.requests.add(1, tags)
        self.errors.add(1 if error else 0, tags)
        self.duration.observe(duration_ms, tags)
