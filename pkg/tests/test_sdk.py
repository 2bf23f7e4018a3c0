from __future__ import annotations

import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spanforge.clock import VirtualClock
from spanforge.context import TraceContext
from spanforge.exposition import parse_exposition
from spanforge.model import IdSource, Level, MetricKind, SpanId, Status, TraceId, decode_line, decode_metric
from spanforge.net import request
from spanforge.sdk import (
    SCRAPE_REQUEST,
    CallbackSink,
    DoubleFinish,
    ExportBuffer,
    KindMismatch,
    ListSink,
    NegativeCounterDelta,
    Registry,
    RoutingSink,
    ScrapeServer,
    SdkConfig,
    SinkUnavailable,
    Telemetry,
    Tracer,
    drain,
    flush_push,
)
from spanforge.sdk.config import DEFAULT_HISTOGRAM_BOUNDS


def make_tracer(clock=None, **cfg):
    clock = clock or VirtualClock(100)
    config = SdkConfig("checkout", service_version="1.2", instance_id="i-1", node_label="n1", **cfg)
    buf = ExportBuffer()
    return Tracer(config, buf, clock, IdSource(5)), buf, clock


# --------------------------------------------------------------------------- tracing


def test_root_span_from_absent_parent():
    tracer, _, _ = make_tracer()
    span, ctx = tracer.start_span(None, "place_order")
    assert span.parent_span_id is None
    assert ctx.parent_span_id == span.span_id
    assert ctx.trace_id == span.trace_id


def test_child_span_links_to_parent():
    tracer, _, _ = make_tracer()
    parent = TraceContext(TraceId(77), SpanId(88), True)
    span, ctx = tracer.start_span(parent, "op")
    assert span.trace_id == TraceId(77)
    assert span.parent_span_id == SpanId(88)
    assert ctx.parent_span_id == span.span_id


def test_duration_and_resource_tags():
    tracer, buf, clock = make_tracer()
    span, _ = tracer.start_span(None, "op", {"node.label": "override"})
    clock.set(1600)
    done = tracer.finish_span(span)
    assert done.duration == 1500
    assert done.tags.as_dict() == {"service.version": "1.2", "instance.id": "i-1", "node.label": "override"}
    assert decode_line(buf.lines()[0]) == done


def test_clock_going_backwards_clamps():
    tracer, _, clock = make_tracer()
    span, _ = tracer.start_span(None, "op")
    clock.set(50)
    done = tracer.finish_span(span)
    assert done.duration == 0
    assert done.tags.get("clock.anomaly") == "true"


def test_unsampled_spans_and_logs_not_exported():
    tracer, buf, _ = make_tracer()
    span, _ = tracer.start_span(TraceContext(TraceId(1), SpanId(2), False), "op")
    tracer.log(span, Level.INFO, "hi")
    tracer.finish_span(span)
    assert len(buf) == 0


def test_double_finish_warns_and_does_not_reemit():
    tracer, buf, _ = make_tracer()
    span, _ = tracer.start_span(None, "op")
    first = tracer.finish_span(span)
    with pytest.warns(DoubleFinish):
        again = tracer.finish_span(span, Status.ERROR)
    assert again is first
    assert len(buf) == 1


def test_logs_correlate():
    tracer, _, _ = make_tracer()
    span, _ = tracer.start_span(None, "op")
    a = tracer.log(span, Level.INFO, "one")
    b = tracer.log(span, Level.ERROR, "two")
    assert a.span_id == span.span_id
    assert a.trace_id == b.trace_id == span.trace_id


def test_empty_operation_rejected():
    tracer, _, _ = make_tracer()
    with pytest.raises(ValueError):
        tracer.start_span(None, "")


def test_config_from_mapping():
    cfg = SdkConfig.from_mapping(
        {"service.name": "a", "export.mode": "pull", "buffer.capacity": "5", "histogram.bounds": "1, 2.5"}
    )
    assert cfg.export_mode == "pull" and cfg.buffer_capacity == 5
    assert cfg.histogram_bounds == (1.0, 2.5, float("inf"))
    with pytest.raises(ValueError):
        SdkConfig.from_mapping({"service.name": "a", "export.mode": "carrier-pigeon"})
    assert DEFAULT_HISTOGRAM_BOUNDS[-1] == 5000


# --------------------------------------------------------------------------- instruments


def test_counter_cumulative():
    reg = Registry(VirtualClock(0))
    c = reg.counter("http_requests_total", {"service": "checkout"})
    for _ in range(3):
        c.add(1)
    assert reg.value(c) == 3
    with pytest.raises(NegativeCounterDelta):
        c.add(-1)
    with pytest.raises(KindMismatch):
        reg.gauge_set(c, 1)


def test_gauge_last_value():
    reg = Registry(VirtualClock(0))
    g = reg.gauge("queue")
    g.set(5)
    g.set(2)
    assert reg.value(g) == 2


def test_histogram_buckets():
    reg = Registry(VirtualClock(0))
    h = reg.histogram("lat", bounds=(10, 100))
    for v in (3, 50, 500):
        h.observe(v)
    body = reg.expose_scrape(now_ms=9)
    assert body == (
        'lat_bucket{le="10"} 1 9\n'
        'lat_bucket{le="100"} 2 9\n'
        'lat_bucket{le="+Inf"} 3 9\n'
        "lat_sum 553 9\n"
        "lat_count 3 9\n"
    )


def test_reregistration_rules():
    reg = Registry()
    assert reg.counter("a") is reg.counter("a")
    with pytest.raises(ValueError):
        reg.gauge("a")


def test_exposition_body():
    reg = Registry(VirtualClock(5_000_000))
    assert reg.expose_scrape() == ""
    reg.counter("http_requests_total", {"service": "checkout"}).add(3)
    assert reg.expose_scrape() == 'http_requests_total{service="checkout"} 3 5000\n'


def test_scrape_is_canonical_under_registration_order():
    def build(order):
        reg = Registry(VirtualClock(0))
        for name in order:
            reg.counter(name).add(1, {"k": name})
        return reg.expose_scrape(now_ms=1)

    assert build(["a", "b", "c"]) == build(["c", "a", "b"])


def test_two_scrapes_identical_modulo_timestamp():
    clock = VirtualClock(0)
    reg = Registry(clock)
    reg.gauge("g").set(1.5)
    first = reg.expose_scrape()
    clock.advance(10_000_000)
    second = reg.expose_scrape()
    strip = lambda body: [line.rsplit(" ", 1)[0] for line in body.splitlines()]  # noqa: E731
    assert strip(first) == strip(second) and first != second


def test_label_escaping_round_trip():
    reg = Registry(VirtualClock(0))
    reg.gauge("g").set(1, {"path": 'a "quoted"\\ value\nnext'})
    [series] = parse_exposition(reg.expose_scrape())
    assert series.tags.get("path") == 'a "quoted"\\ value\nnext'


def test_push_mode_emits_cumulative_lines():
    buf = ExportBuffer()
    reg = Registry(VirtualClock(2_000_000), buf)
    c = reg.counter("n")
    c.add(2)
    c.add(3)
    reg.histogram("h").observe(7)
    samples = [decode_metric(line) for line in buf.lines()]
    assert [(s.kind, s.value, s.timestamp) for s in samples] == [
        (MetricKind.COUNTER, 2.0, 2000),
        (MetricKind.COUNTER, 5.0, 2000),
        (MetricKind.HISTOGRAM_OBSERVATION, 7.0, 2000),
    ]


@given(st.lists(st.lists(st.integers(0, 50), max_size=30), min_size=1, max_size=6))
def test_concurrent_counter_conservation(batches):
    reg = Registry()
    c = reg.counter("n")

    def work(deltas):
        for d in deltas:
            c.add(d)

    threads = [threading.Thread(target=work, args=(b,)) for b in batches]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert (reg.value(c) or 0) == sum(map(sum, batches))


def test_red_bundle():
    tel = Telemetry(SdkConfig("cart", node_label="n1"), VirtualClock(0))
    tel.red.record("get", 12.0)
    tel.red.record("get", 30.0, error=True)
    assert tel.metrics.value("requests_total", {"operation": "get"}) == 2
    assert tel.metrics.value("errors_total", {"operation": "get"}) == 1
    assert tel.metrics.value("request_duration_ms", {"operation": "get"}).count == 2


# --------------------------------------------------------------------------- export


def test_flush_batch():
    buf = ExportBuffer()
    for i in range(5):
        buf.offer(f"l{i}")
    sink = ListSink()
    assert flush_push(buf, sink, batch_size=10) == 5
    assert sink.lines == [f"l{i}" for i in range(5)] and len(buf) == 0


def test_capacity_drops_are_counted():
    buf = ExportBuffer(capacity=3)
    results = [buf.offer(str(i)) for i in range(5)]
    assert results == [True, True, True, False, False]
    assert buf.drop_counter == 2


def test_sink_failure_requeues_once_then_drops():
    def down(_lines):
        raise SinkUnavailable("down")

    buf = ExportBuffer()
    for i in range(4):
        buf.offer(str(i))
    sink = CallbackSink(down)
    assert flush_push(buf, sink) == 0
    assert len(buf) == 4 and buf.drop_counter == 0
    assert flush_push(buf, sink) == 0
    assert len(buf) == 0 and buf.drop_counter == 4


def test_routing_sink_and_drain():
    spans, logs, metrics = ListSink(), ListSink(), ListSink()
    buf = ExportBuffer()
    for line in ("SPAN x", "LOG y", "METRIC z", "SPAN w"):
        buf.offer(line)
    assert drain(buf, RoutingSink({"SPAN": spans, "LOG": logs, "METRIC": metrics}), batch_size=1) == 4
    assert spans.lines == ["SPAN x", "SPAN w"] and logs.lines == ["LOG y"] and metrics.lines == ["METRIC z"]


def test_scrape_server():
    reg = Registry(VirtualClock(1_000))
    reg.counter("hits_total").add(4)
    with ScrapeServer(reg) as server:
        assert request(server.address, [SCRAPE_REQUEST]) == ["hits_total 4 1"]
        assert request(server.address, ["HELLO"])[0].startswith("error")


def test_instrumentation_never_blocks_when_full():
    tracer, buf, _ = make_tracer()
    tracer.buffer = buf = ExportBuffer(2)
    for _ in range(5):
        span, _ = tracer.start_span(None, "op")
        tracer.finish_span(span)
    assert len(buf) == 2 and buf.drop_counter == 3
