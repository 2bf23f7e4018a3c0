from __future__ import annotations

import dataclasses

import pytest

from spanforge.collector import TraceFilter
from spanforge.metrics_service import SUM, MetricsService
from spanforge.model import Status, decode_log, decode_span
from spanforge.sim import (
    InvalidTopology,
    Latency,
    TelemetryCorpus,
    TopologyConfig,
    UnknownService,
    canonical_topology,
    inject_skew,
    parse_truth,
    run,
)
from oracles import collect, cross_service_nesting, raw_trees, tree_shape, truth_shape

ONE = """
[service.solo]
[workload]
requests = 1
arrival_rate = 1
ingress = solo
seed = 1
"""

FANOUT = """
[service.gw]
[service.a]
[service.b]
[service.c]
[service.d]
[call.gw.a]
latency = triangular:100,300,900
[call.gw.b]
latency = fixed:400
[call.a.c]
latency = triangular:50,60,500
error_probability = 0.01
[call.b.d]
latency = triangular:10,20,30
[call.a.d]
[workload]
requests = 1000
arrival_rate = 50
ingress = gw
seed = 99
"""


def test_one_service_one_span():
    corpus = run(TopologyConfig.parse(ONE))
    assert len(corpus.spans) == 1
    span = decode_span(corpus.spans[0])
    assert span.status is Status.OK and span.service == "solo" and span.parent_span_id is None
    assert len(corpus.truth) == 1 and corpus.truth[0].nodes[0].duration == span.duration == 1000


def test_determinism():
    cfg = TopologyConfig.parse(FANOUT)
    a, b = run(cfg), run(cfg)
    assert (a.spans, a.logs, a.metrics, a.truth_lines()) == (b.spans, b.logs, b.metrics, b.truth_lines())


def test_fanout_error_truth_matches_corpus():
    corpus = run(TopologyConfig.parse(FANOUT))
    error_spans = sum(decode_span(l).status is Status.ERROR for l in corpus.spans)
    truth_errors = sum(n.status is Status.ERROR for r in corpus.truth for n in r.nodes)
    assert error_spans == truth_errors > 0
    assert sum(corpus.error_counts().values()) == truth_errors


def test_ground_truth_isomorphism():
    corpus = run(TopologyConfig.parse(FANOUT))
    store = collect(corpus).store
    assert len(store) == len(corpus.truth) == 1000
    for req in corpus.truth:
        tree = store.get(req.trace_id)
        assert tree_shape(tree) == truth_shape(req)
        assert not tree.anomalies


def test_truth_round_trip(tmp_path):
    corpus = run(canonical_topology())
    corpus.write(tmp_path)
    back = TelemetryCorpus.read(tmp_path)
    assert back.spans == corpus.spans and back.metrics == corpus.metrics
    assert [r.lines() for r in back.truth] == [r.lines() for r in corpus.truth]
    assert parse_truth(corpus.truth_lines())[0].root.operation == "GET /shop"


def test_skew_shifts_only_that_service(canonical_corpus):
    skewed = run(inject_skew(canonical_topology(), "checkout", 250_000))
    true_start = {n.span_id.value: n.start for r in skewed.truth for n in r.nodes}
    for line in skewed.spans:
        s = decode_span(line)
        expected = true_start[s.span_id.value] + (250_000 if s.service == "checkout" else 0)
        assert s.start == expected
    assert skewed.truth_lines() == canonical_corpus.truth_lines()  # ground truth keeps true times
    for line in skewed.logs:
        rec = decode_log(line)
        assert rec.timestamp >= 0


def test_skew_repaired_by_collector():
    skewed = run(inject_skew(canonical_topology(), "checkout", 250_000))
    before, total = cross_service_nesting(raw_trees(skewed.spans))
    assert before < total
    after, total_after = cross_service_nesting(collect(skewed).store.trees())
    assert total_after == total and after >= 0.99 * total


def test_zero_offset_is_identity(canonical_corpus):
    same = run(inject_skew(canonical_topology(), "payment", 0))
    assert same.spans == canonical_corpus.spans and same.metrics == canonical_corpus.metrics


def test_inject_skew_unknown_and_additive():
    cfg = canonical_topology()
    with pytest.raises(UnknownService):
        inject_skew(cfg, "ghost", 1)
    twice = inject_skew(inject_skew(cfg, "catalog", 5), "catalog", 7)
    assert twice.service("catalog").clock_offset_us == 12


@pytest.mark.parametrize(
    "text",
    [
        "[service.a]\n[service.b]\n[call.a.b]\n[call.b.a]\n[workload]\ningress = a\nseed = 1\n",
        "[service.a]\n[call.a.a]\n[workload]\ningress = a\nseed = 1\n",
        "[service.a]\n[call.a.zz]\n[workload]\ningress = a\nseed = 1\n",
        "[service.a]\n[workload]\ningress = a\n",
        "[service.a]\n[workload]\ningress = b\nseed = 1\n",
        "[service.a]\n[service.b]\n[call.a.b]\nerror_probability = 1.5\n[workload]\ningress = a\nseed = 1\n",
        "[service.A]\n[workload]\ningress = A\nseed = 1\n",
        "[service.a]\n[call.a]\n[workload]\ningress = a\nseed = 1\n",
    ],
)
def test_invalid_topologies(text):
    with pytest.raises(InvalidTopology):
        TopologyConfig.parse(text)


def test_latency_parse():
    assert Latency.parse("fixed:5").params == (5,)
    for bad in ("fixed:-1", "triangular:3,2,1", "normal:1", "fixed:x"):
        with pytest.raises(InvalidTopology):
            Latency.parse(bad)


def test_config_text_round_trip():
    cfg = canonical_topology()
    assert TopologyConfig.parse(cfg.to_text()) == cfg
    assert dataclasses.replace(cfg) == cfg


def test_metric_trace_agreement(canonical_corpus):
    for service, reg in canonical_corpus.registries.items():
        if service.startswith("node:"):
            continue
        for (svc, op), n in canonical_corpus.request_counts().items():
            if svc == service:
                assert reg.value("requests_total", {"operation": op}) == n
    svc = MetricsService()
    svc.ingest_push(canonical_corpus.metrics)
    lo, hi = svc.time_bounds()
    total = svc.query_range("requests_total", None, lo, hi + 1, SUM)[0].value
    assert total == sum(canonical_corpus.request_counts().values()) == 7 * 200


def test_user_tag_search(canonical_corpus):
    store = collect(canonical_corpus).store
    tagged = [t for t in store.trees() if t.root.span.tags.get("user.id") == "7"]
    hits = store.query(TraceFilter(tags={"user.id": "7"}))
    assert len(hits) == len(tagged) > 0
    assert {h.trace_id for h in hits} == {t.trace_id for t in tagged}


def test_head_policy_hybrid():
    text = FANOUT.replace("ingress = gw", "ingress = a, b").replace("requests = 1000", "requests = 100")
    text += "[head]\na = 1.0\nb = 0.0\n"
    corpus = run(TopologyConfig.parse(text))
    kept = {decode_span(l).trace_id for l in corpus.spans}
    for req in corpus.truth:
        assert (req.trace_id in kept) == (req.ingress == "a") == req.sampled


def test_canonical_shape(canonical_corpus):
    assert len(canonical_corpus.truth) == 200
    assert all(len(r.nodes) == 7 for r in canonical_corpus.truth)
    assert len(canonical_corpus.spans) == 1400
