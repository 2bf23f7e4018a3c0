from __future__ import annotations

import io
import random
import socket
from pathlib import Path

import pytest

from spanforge.cli import bar, critical_path, main, render_table, waterfall
from spanforge.cli.render import format_us_as_ms
from spanforge.collector import TraceCollector
from spanforge.collector.server import CollectorServer
from spanforge.collector.tree import assemble
from spanforge.metrics_service import MetricsServer, MetricsService
from spanforge.model import Span, SpanId, Status, TraceId
from spanforge.net import request
from oracles import critical_path_oracle

GOLDEN = Path(__file__).parent / "golden"
GOLDEN_TRACE = "d330a5494d14cf1a4cc346363c234038"


def cli(*argv: str) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def span(sid, parent, start, dur, service="svc", op=None, status=Status.OK, tid=1):
    return Span(TraceId(tid), SpanId(sid), SpanId(parent) if parent else None, service, op or f"op{sid}", start, dur, status)


def random_tree(rng: random.Random, n: int):
    spans = [span(1, None, 0, rng.randint(1, 1000))]
    for sid in range(2, n + 1):
        parent = rng.choice(spans)
        # children mostly inside, sometimes straddling the parent
        start = parent.start + rng.randint(-50, parent.duration)
        spans.append(span(sid, parent.span_id.value, start, rng.randint(0, parent.duration), f"s{rng.randint(1, 3)}"))
    return assemble(spans)


# ------------------------------------------------------------------ rendering


def test_bar_rules():
    assert bar(0, 100, 100) == "#" * 40
    assert bar(0, 0, 0) == "#" * 40
    assert bar(0, 50, 100) == "#" * 20 + "." * 20
    assert bar(99, 1, 100) == "." * 39 + "#"  # never empty
    assert bar(0, 0, 100) == "#" + "." * 39
    assert bar(100, 0, 100) == "." * 39 + "#"
    assert bar(1, 1, 80) == "." + "#" + "." * 38  # 0.5 of a cell rounds up
    assert bar(0, 3, 80) == "##" + "." * 38  # 1.5 cells round up to 2
    assert len({len(bar(s, d, 997)) for s in range(0, 997, 13) for d in (0, 5, 500)}) == 1


def test_ms_formatting():
    assert format_us_as_ms(56557) == "56.557"
    assert format_us_as_ms(5) == "0.005"
    assert format_us_as_ms(-1500) == "-1.500"


def test_single_span_waterfall():
    text = waterfall(assemble([span(7, None, 10, 250, "api", "GET /")]))
    lines = text.splitlines()
    assert len(lines) == 3 and lines[0].startswith("trace 00000000000000000000000000000001  spans 1")
    assert "|" + "#" * 40 + "|  OK" in lines[2]


def test_waterfall_marks_anomalies():
    tree = assemble([span(1, None, 0, 100), span(2, 99, 10, 20), span(3, 2, 0, 300)])
    text = waterfall(tree)
    assert "--" in text.splitlines()[2]  # synthetic root row
    assert "[1] orphaned_spans" in text


def test_tables():
    assert render_table(("a", "b"), [(1, 0.1 + 0.2), ("x", None)], "tsv") == "a\tb\n1\t0.30000000000000004\nx\t-\n"
    assert render_table(("name", "v"), [("x", 1.5), ("yy", 10.0)]) == "name       v\nx      1.500\nyy    10.000\n"


# -------------------------------------------------------------- critical path


def test_critical_path_linear_chain():
    tree = assemble([span(1, None, 0, 100, "a"), span(2, 1, 10, 80, "b"), span(3, 2, 20, 50, "c")])
    steps = critical_path(tree)
    assert [s.node.service for s in steps] == ["a", "b", "c"]
    assert [s.self_time for s in steps] == [20, 30, 50]


def test_critical_path_parallel_takes_latest_end():
    tree = assemble([span(1, None, 0, 100), span(2, 1, 0, 60), span(3, 1, 10, 85)])
    ids = [s.node.span_id.value for s in critical_path(tree)]
    assert ids == [1, 3]


def test_critical_path_sequential_children_both_taken():
    tree = assemble([span(1, None, 0, 100), span(2, 1, 0, 40), span(3, 1, 50, 40), span(4, 1, 30, 30)])
    steps = critical_path(tree)
    assert [s.node.span_id.value for s in steps] == [1, 2, 3]
    assert steps[0].self_time == 20


@pytest.mark.parametrize("seed", range(300))
def test_critical_path_matches_exhaustive_oracle(seed):
    rng = random.Random(seed)
    tree = random_tree(rng, rng.randint(1, 10))
    steps = critical_path(tree)
    assert [s.node.span_id.value if s.node.span_id else -1 for s in steps] == critical_path_oracle(tree.root)
    assert sum(s.self_time for s in steps) == tree.root.duration


@pytest.mark.parametrize("seed", range(20))
def test_self_times_sum_large_trees(seed):
    rng = random.Random(1000 + seed)
    tree = random_tree(rng, rng.randint(50, 400))
    steps = critical_path(tree)
    assert sum(s.self_time for s in steps) == tree.root.duration
    assert all(s.self_time >= 0 for s in steps)


# ------------------------------------------------------------- commands/golden


def test_golden_waterfall(canonical_dir):
    code, out, _ = cli("trace", "get", GOLDEN_TRACE, "--file", str(canonical_dir))
    assert code == 0 and out == (GOLDEN / "waterfall.txt").read_text()


def test_golden_waterfall_skewed(tmp_path):
    assert cli("simulate", "--out", str(tmp_path), "--skew", "checkout=250000")[0] == 0
    code, out, _ = cli("trace", "get", GOLDEN_TRACE, "--file", str(tmp_path))
    assert code == 0 and out == (GOLDEN / "waterfall_skewed.txt").read_text()


def test_golden_critical_path(canonical_dir):
    code, out, _ = cli("trace", "critical-path", GOLDEN_TRACE, "--file", str(canonical_dir), "--format", "tsv")
    assert code == 0 and out == (GOLDEN / "critical_path.tsv").read_text()


@pytest.mark.parametrize("service", ["frontend", "payment"])
def test_golden_red_tsv(canonical_dir, service):
    code, out, _ = cli("view", "red", service, "--file", str(canonical_dir), "--format", "tsv")
    assert code == 0 and out == (GOLDEN / f"red_{service}.tsv").read_text()


def test_red_is_pass_through(canonical_dir, canonical_corpus):
    svc = MetricsService()
    svc.ingest_push(canonical_corpus.metrics)
    lo, hi = svc.time_bounds()
    table = svc.derived_view("red", "checkout", lo, hi + 1)
    code, out, _ = cli("view", "red", "checkout", "--file", str(canonical_dir), "--format", "tsv")
    assert out == render_table(table.columns, table.rows, "tsv")


def test_other_views_and_query(canonical_dir):
    code, out, _ = cli("view", "use", "cpu", "--file", str(canonical_dir), "--format", "tsv")
    assert code == 0 and out.splitlines()[1].split("\t")[:3] == ["cpu", "node-a", "35"]
    code, out, _ = cli("view", "golden", "payment", "--file", str(canonical_dir))
    assert code == 0 and "saturation" in out
    code, out, _ = cli(
        "metrics", "query", "requests_total", "--file", str(canonical_dir), "--aggregate", "sum",
        "--group-by", "service", "--format", "tsv",
    )
    assert code == 0
    rows = [r.split("\t") for r in out.splitlines()[1:]]
    assert [(r[0], r[2]) for r in rows] == [
        ("catalog", "400"), ("checkout", "200"), ("frontend", "200"), ("inventory", "400"), ("payment", "200")
    ]


def test_search(canonical_dir, canonical_corpus):
    code, out, _ = cli("trace", "search", "--file", str(canonical_dir), "--tag", "user.id=7", "--format", "tsv")
    rows = out.splitlines()[1:]
    truth = canonical_corpus.truth
    assert code == 0 and len(rows) > 0 and all(r.split("\t")[6] == "GET /shop" for r in rows)
    starts = [int(r.split("\t")[1]) for r in rows]
    assert starts == sorted(starts, reverse=True)
    code, out, _ = cli("trace", "search", "--file", str(canonical_dir), "--format", "tsv")
    assert len(out.splitlines()) == 1 + len(truth) == 201
    code, out, _ = cli("trace", "search", "--file", str(canonical_dir), "--start", "1000000", "--end", "5")
    assert code == 0 and len(out.splitlines()) == 1  # conflicting filters: header only
    code, out, _ = cli("trace", "search", "--file", str(canonical_dir), "--status", "ERROR", "--limit", "3")
    assert len(out.splitlines()) == 4


def test_exit_codes(canonical_dir, capsys):
    code, _, err = cli("trace", "get", "0" * 31 + "1", "--file", str(canonical_dir))
    assert code == 1 and err == "error: trace not found\n"
    code, _, err = cli("metrics", "query", "no_such_metric", "--file", str(canonical_dir))
    assert code == 1 and "no_such_metric" in err
    code, _, err = cli("view", "red", "ghost", "--file", str(canonical_dir))
    assert code == 1 and "requests_total" in err
    assert cli("trace", "get", "xyz", "--file", str(canonical_dir))[0] == 2
    assert cli("trace", "get", GOLDEN_TRACE)[0] == 2  # no data source
    assert cli("metrics", "query", "up", "--file", str(canonical_dir), "--aggregate", "median")[0] == 2
    assert cli("metrics", "query", "up", "--file", str(canonical_dir), "--start", "5", "--end", "5")[0] == 2
    assert cli("bogus")[0] == 2
    assert cli("simulate", "--out", "/tmp/x", "--skew", "ghost=5")[0] == 1
    assert cli("simulate", "--out", "/tmp/x", "--skew", "nonsense")[0] == 2


def test_env_defaults(canonical_dir, monkeypatch):
    monkeypatch.setenv("SPANFORGE_FILE", str(canonical_dir))
    monkeypatch.setenv("SPANFORGE_FORMAT", "tsv")
    code, out, _ = cli("view", "red", "frontend")
    assert code == 0 and out == (GOLDEN / "red_frontend.tsv").read_text()


def dead_address() -> str:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    host, port = s.getsockname()
    s.close()
    return f"{host}:{port}"


def test_remote_services_match_local(canonical_dir, canonical_corpus):
    collector = TraceCollector()
    with CollectorServer(collector) as cs, MetricsServer(MetricsService()) as ms:
        request(cs.address, canonical_corpus.spans + canonical_corpus.logs)
        collector.flush()
        request(ms.address, canonical_corpus.metrics)
        caddr, maddr = "%s:%d" % cs.address, "%s:%d" % ms.address
        assert cli("trace", "get", GOLDEN_TRACE, "--collector", caddr) == cli("trace", "get", GOLDEN_TRACE, "--file", str(canonical_dir))
        assert cli("trace", "search", "--collector", caddr, "--tag", "user.id=3") == cli(
            "trace", "search", "--file", str(canonical_dir), "--tag", "user.id=3"
        )
        for view in (("red", "payment"), ("use", "cpu"), ("golden", "frontend")):
            assert cli("view", *view, "--metrics", maddr, "--format", "tsv") == cli(
                "view", *view, "--file", str(canonical_dir), "--format", "tsv"
            )
        q = ("metrics", "query", "request_duration_ms", "--aggregate", "pct99", "--group-by", "service", "--format", "tsv")
        assert cli(*q, "--metrics", maddr) == cli(*q, "--file", str(canonical_dir))
        code, _, err = cli("trace", "get", "0" * 31 + "1", "--collector", caddr)
        assert code == 1 and err == "error: trace not found\n"
        assert cli("metrics", "query", "nope", "--metrics", maddr)[0] == 1
    assert cli("trace", "get", GOLDEN_TRACE, "--collector", dead_address())[0] == 1
