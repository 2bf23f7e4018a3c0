"""RED, Golden Signals and USE tables built from stored series.

RED and GOLDEN read the SDK's prefab instruments (``requests_total``,
``errors_total``, ``request_duration_ms``); USE and the GOLDEN saturation
column read the infrastructure exporter's ``<resource>_*`` series. Rates are
per second over the window. Availability is ``1 - errors/requests``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

from ..model import MetricKind
from .query import increase, nearest_rank
from .store import Series, SeriesStore

REQUESTS = "requests_total"
ERRORS = "errors_total"
DURATION = "request_duration_ms"
SATURATION_SOURCE = "cpu_utilization_percent"
PERCENTILES = (50, 95, 99)


class MissingInstrument(LookupError):
    def __init__(self, name: str, target: str = "") -> None:
        super().__init__(name)
        self.name = name
        self.target = target

    def __str__(self) -> str:
        where = f" for {self.target}" if self.target else ""
        return f"missing instrument: {self.name}{where}"


@dataclass
class ViewTable:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple[Any, ...]] = field(default_factory=list)

    def as_dicts(self) -> list[dict[str, Any]]:
        return [dict(zip(self.columns, r)) for r in self.rows]


def _series(store: SeriesStore, name: str, **tags: str) -> list[Series]:
    return [s for s in store.series(name) if all(s.key.tags.get(k) == v for k, v in tags.items())]


def _increase(series: list[Series], store: SeriesStore, start: int, end: int) -> float:
    return math.fsum(increase(s.points(store.tiers), start, end) for s in series)


def _window_values(series: list[Series], store: SeriesStore, start: int, end: int) -> list[float]:
    return [v for s in series for _, v in s.points(store.tiers, start, end)]


def _bucket_percentiles(series: list[Series], store: SeriesStore, start: int, end: int) -> dict[int, float | None]:
    """Percentiles from scraped ``_bucket`` counters: the upper bound of the
    bucket holding the nearest-rank observation."""
    counts: dict[float, float] = {}
    for s in series:
        le = s.key.tags.get("le")
        bound = math.inf if le in ("+Inf", "inf") else float(le)
        counts[bound] = counts.get(bound, 0.0) + increase(s.points(store.tiers), start, end)
    bounds = sorted(counts)
    total = counts[bounds[-1]] if bounds else 0.0
    out: dict[int, float | None] = {}
    for p in PERCENTILES:
        if total <= 0:
            out[p] = None
            continue
        rank = math.ceil(p * total / 100)
        out[p] = next(b for b in bounds if counts[b] >= rank)
    return out


def _durations(store: SeriesStore, start: int, end: int, **tags: str) -> dict[int, float | None]:
    raw = [s for s in _series(store, DURATION, **tags) if s.kind is MetricKind.HISTOGRAM_OBSERVATION]
    if raw:
        values = _window_values(raw, store, start, end)
        return {p: nearest_rank(values, p) if values else None for p in PERCENTILES}
    buckets = _series(store, DURATION + "_bucket", **tags)
    if buckets:
        return _bucket_percentiles(buckets, store, start, end)
    return {p: None for p in PERCENTILES}


def _window_s(start: int, end: int) -> float:
    if end <= start:
        raise ValueError("window must be non-empty")
    return (end - start) / 1000.0


def red_view(store: SeriesStore, service: str, start: int, end: int) -> ViewTable:
    """One row per operation of ``service``."""
    window = _window_s(start, end)
    req = _series(store, REQUESTS, service=service)
    if not req:
        raise MissingInstrument(REQUESTS, service)
    err = _series(store, ERRORS, service=service)
    if not err:
        raise MissingInstrument(ERRORS, service)
    table = ViewTable(
        "red",
        ("service", "operation", "requests", "errors", "rate", "error_rate", "availability", "p50_ms", "p95_ms", "p99_ms"),
    )
    for op in sorted({s.key.tags.get("operation", "") for s in req}):
        n_req = _increase([s for s in req if s.key.tags.get("operation", "") == op], store, start, end)
        n_err = _increase([s for s in err if s.key.tags.get("operation", "") == op], store, start, end)
        d = _durations(store, start, end, service=service, operation=op) if op else _durations(store, start, end, service=service)
        availability = 1.0 - n_err / n_req if n_req else None
        table.rows.append(
            (service, op, n_req, n_err, n_req / window, n_err / window, availability, d[50], d[95], d[99])
        )
    return table


def golden_view(store: SeriesStore, service: str, start: int, end: int) -> ViewTable:
    """RED per operation plus saturation: mean CPU utilisation of the nodes
    (``node.label``) the service's request series came from."""
    red = red_view(store, service, start, end)
    labels = sorted({s.key.tags.get("node.label") for s in _series(store, REQUESTS, service=service)} - {None})
    infra = [s for s in store.series(SATURATION_SOURCE) if s.key.tags.get("node.label") in labels]
    if not infra:
        raise MissingInstrument(SATURATION_SOURCE, service)
    values = _window_values(infra, store, start, end)
    saturation = math.fsum(values) / len(values) if values else None
    table = ViewTable(
        "golden",
        ("service", "operation", "latency_p50_ms", "latency_p95_ms", "latency_p99_ms", "traffic", "errors", "saturation"),
    )
    for r in red.as_dicts():
        table.rows.append(
            (r["service"], r["operation"], r["p50_ms"], r["p95_ms"], r["p99_ms"], r["rate"], r["error_rate"], saturation)
        )
    return table


def use_view(store: SeriesStore, resource: str, start: int, end: int) -> ViewTable:
    """One row per node: mean utilisation, peak saturation, error increase."""
    _window_s(start, end)
    res = resource.lower()
    util = store.series(f"{res}_utilization_percent")
    if not util:
        raise MissingInstrument(f"{res}_utilization_percent", resource)
    sat = store.series(f"{res}_saturation")
    errs = store.series(f"{res}_errors_total")
    table = ViewTable("use", ("resource", "node", "utilization", "saturation", "errors"))
    for node in sorted({s.key.tags.get("node.label", "") for s in util}):
        def on_node(series: list[Series]) -> list[Series]:
            return [s for s in series if s.key.tags.get("node.label", "") == node]

        u = _window_values(on_node(util), store, start, end)
        s_vals = _window_values(on_node(sat), store, start, end)
        table.rows.append(
            (
                res,
                node,
                math.fsum(u) / len(u) if u else None,
                max(s_vals) if s_vals else None,
                _increase(on_node(errs), store, start, end),
            )
        )
    return table


VIEWS = {"red": red_view, "golden": golden_view, "use": use_view}


def derived_view(store: SeriesStore, view: str, target: str, start: int, end: int) -> ViewTable:
    try:
        fn = VIEWS[view]
    except KeyError:
        raise ValueError(f"unknown view {view!r}") from None
    return fn(store, target, start, end)
