"""``spanforge`` command line.

Exit codes: 0 success (empty results included), 1 not found / unknown name /
service error, 2 usage error. Every data flag can also come from the
environment: ``SPANFORGE_COLLECTOR``, ``SPANFORGE_METRICS``,
``SPANFORGE_FILE``, ``SPANFORGE_FORMAT``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from typing import Sequence

from ..collector import NotFound, TraceCollector, TraceFilter, TraceStore
from ..collector.server import CollectorServer
from ..metrics_service import (
    DEFAULT_TIERS,
    Aggregate,
    EmptyRange,
    MetricsServer,
    MetricsService,
    MissingInstrument,
    SeriesStore,
    UnknownMetric,
    parse_tiers,
)
from ..model import Status, TraceId
from ..net import parse_address
from ..sampling import SamplingPolicy
from ..sim import InvalidTopology, TopologyConfig, UnknownService, canonical_topology, inject_skew, run
from .backends import (
    BackendError,
    LocalMetrics,
    LocalTraces,
    RemoteMetrics,
    RemoteTraces,
    parse_tag_filters,
)
from .render import critical_path, critical_path_table, render_table, waterfall

EXIT_OK, EXIT_NOT_FOUND, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _env(name: str, default: str | None = None) -> str | None:
    return os.environ.get(f"SPANFORGE_{name}", default)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--collector", default=_env("COLLECTOR"), help="collector address host:port")
    p.add_argument("--metrics", default=_env("METRICS"), help="metrics service address host:port")
    p.add_argument("--file", default=_env("FILE"), help="corpus directory (or store file) instead of services")
    p.add_argument("--format", default=_env("FORMAT", "plain"), choices=("plain", "tsv"))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="spanforge", description="Query traces and metrics; run simulations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    trace = sub.add_parser("trace", help="trace lookup and analysis")
    tsub = trace.add_subparsers(dest="trace_command", required=True)
    p = tsub.add_parser("get", parents=[common], help="render a trace waterfall")
    p.add_argument("trace_id")
    p = tsub.add_parser("critical-path", parents=[common], help="spans on the latency-critical path")
    p.add_argument("trace_id")
    p = tsub.add_parser("search", parents=[common], help="find traces")
    p.add_argument("--service")
    p.add_argument("--operation")
    p.add_argument("--status", choices=[s.value for s in Status])
    p.add_argument("--min-duration", type=int, metavar="US")
    p.add_argument("--tag", action="append", default=[], metavar="K=V")
    p.add_argument("--start", type=int, metavar="US")
    p.add_argument("--end", type=int, metavar="US")
    p.add_argument("--limit", type=int)

    metrics = sub.add_parser("metrics", help="metric range queries")
    msub = metrics.add_subparsers(dest="metrics_command", required=True)
    p = msub.add_parser("query", parents=[common], help="aggregate one metric over a range")
    p.add_argument("name")
    p.add_argument("--tag", action="append", default=[], metavar="K=V")
    p.add_argument("--start", type=int, metavar="MS")
    p.add_argument("--end", type=int, metavar="MS")
    p.add_argument("--aggregate", default="avg", help="avg|sum|min|max|count|pct99 ...")
    p.add_argument("--group-by", action="append", default=[], metavar="KEY")
    p.add_argument("--step", type=int, metavar="MS")

    view = sub.add_parser("view", help="RED, Golden Signals or USE table")
    vsub = view.add_subparsers(dest="view", required=True)
    for name, what in (("red", "service"), ("golden", "service"), ("use", "resource (cpu, memory, ...)")):
        p = vsub.add_parser(name, parents=[common])
        p.add_argument("target", help=what)
        p.add_argument("--start", type=int, metavar="MS")
        p.add_argument("--end", type=int, metavar="MS")

    p = sub.add_parser("simulate", help="generate a telemetry corpus")
    p.add_argument("--config", help="topology file (default: built-in canonical shop)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--skew", action="append", default=[], metavar="SERVICE=US", help="add a clock offset")

    serve = sub.add_parser("serve", help="run a collector or metrics service")
    ssub = serve.add_subparsers(dest="service", required=True)
    p = ssub.add_parser("collector")
    p.add_argument("--listen", default="127.0.0.1:7070")
    p.add_argument("--store", help="append-only trace file")
    p.add_argument("--policy", help="sampling policy file")
    p.add_argument("--idle-timeout", type=float, default=5.0)
    p = ssub.add_parser("metrics")
    p.add_argument("--listen", default="127.0.0.1:7071")
    p.add_argument("--scrape", action="append", default=[], metavar="HOST:PORT")
    p.add_argument("--interval", type=float, default=10.0)
    p.add_argument("--tiers", help="e.g. 10s:30m:last,1h:30d:avg")
    p.add_argument("--cardinality-limit", type=int, default=1000)
    return parser


# --------------------------------------------------------------------------
# data sources


def _traces(args):
    if args.file:
        return LocalTraces(args.file)
    if args.collector:
        return RemoteTraces(parse_address(args.collector))
    raise UsageError("need --collector or --file")


def _metrics(args):
    if args.file:
        return LocalMetrics(args.file)
    if args.metrics:
        return RemoteMetrics(parse_address(args.metrics))
    raise UsageError("need --metrics or --file")


def _trace_id(text: str) -> TraceId:
    try:
        return TraceId.from_hex(text.lower())
    except ValueError:
        raise UsageError(f"bad trace id {text!r}") from None


def _window(src, args) -> tuple[int, int]:
    """Explicit --start/--end, else everything stored."""
    if args.start is not None and args.end is not None:
        return args.start, args.end
    bounds = src.bounds()
    lo, hi = bounds if bounds is not None else (0, 0)
    return (args.start if args.start is not None else lo, args.end if args.end is not None else hi + 1)


# --------------------------------------------------------------------------
# commands


def cmd_trace(args, out) -> int:
    src = _traces(args)
    if args.trace_command == "search":
        flt = TraceFilter(
            service=args.service,
            operation=args.operation,
            status=Status(args.status) if args.status else None,
            min_duration=args.min_duration,
            tags=parse_tag_filters(args.tag),
            start=args.start,
            end=args.end,
        )
        hits = src.search(flt)
        if args.limit is not None:
            hits = hits[: args.limit]
        columns = ("trace_id", "start_us", "duration_us", "spans", "status", "service", "operation")
        rows = [
            (h.trace_id.hex, h.start, h.duration, h.span_count, "ERROR" if h.error else "OK", h.service, h.operation)
            for h in hits
        ]
        out.write(render_table(columns, rows, args.format))
        return EXIT_OK
    tree = src.get(_trace_id(args.trace_id))
    if args.trace_command == "get":
        out.write(waterfall(tree))
    else:
        columns, rows = critical_path_table(critical_path(tree))
        out.write(render_table(columns, rows, args.format))
    return EXIT_OK


def cmd_metrics(args, out) -> int:
    src = _metrics(args)
    try:
        agg = Aggregate.parse(args.aggregate)
    except ValueError as e:
        raise UsageError(str(e)) from None
    start, end = _window(src, args)
    rows = src.query(args.name, parse_tag_filters(args.tag), start, end, agg, args.group_by, args.step)
    columns = (*args.group_by, "timestamp_ms", str(agg))
    table = [(*(r.group.get(k, "") for k in args.group_by), r.timestamp, r.value) for r in rows]
    out.write(render_table(columns, table, args.format))
    return EXIT_OK


def cmd_view(args, out) -> int:
    src = _metrics(args)
    start, end = _window(src, args)
    t = src.view(args.view, args.target, start, end)
    out.write(render_table(t.columns, t.rows, args.format))
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    cfg = TopologyConfig.load(args.config) if args.config else canonical_topology()
    for item in args.skew:
        service, sep, offset = item.partition("=")
        if not sep:
            raise UsageError(f"expected SERVICE=US, got {item!r}")
        cfg = inject_skew(cfg, service, int(offset))
    corpus = run(cfg)
    corpus.write(args.out)
    out.write(
        f"wrote {len(corpus.truth)} requests: {len(corpus.spans)} spans, {len(corpus.logs)} logs, "
        f"{len(corpus.metrics)} metric samples to {args.out}\n"
    )
    return EXIT_OK


def cmd_serve(args, out) -> int:
    if args.service == "collector":
        policy = SamplingPolicy.load(args.policy) if args.policy else SamplingPolicy.keep_all()
        collector = TraceCollector(args.idle_timeout, policy=policy, store=TraceStore(args.store))
        server = CollectorServer(collector, parse_address(args.listen))
    else:
        tiers = parse_tiers(args.tiers) if args.tiers else DEFAULT_TIERS
        store = SeriesStore(tiers, args.cardinality_limit)
        targets = [parse_address(t) for t in args.scrape]
        server = MetricsServer(MetricsService(store), parse_address(args.listen), targets, args.interval)
    server.start()
    host, port = server.address
    out.write(f"{args.service} listening on {host}:{port}\n")
    out.flush()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


COMMANDS = {"trace": cmd_trace, "metrics": cmd_metrics, "view": cmd_view, "simulate": cmd_simulate, "serve": cmd_serve}


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=err)
    try:
        return COMMANDS[args.command](args, out)
    except NotFound:
        err.write("error: trace not found\n")
        return EXIT_NOT_FOUND
    except (UnknownMetric, MissingInstrument, UnknownService) as e:
        err.write(f"error: {e}\n")
        return EXIT_NOT_FOUND
    except (UsageError, EmptyRange, InvalidTopology) as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE
    except (BackendError, ConnectionError, OSError) as e:
        err.write(f"error: {e}\n")
        return EXIT_NOT_FOUND
    except ValueError as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
