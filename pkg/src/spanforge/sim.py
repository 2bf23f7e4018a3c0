"""Deterministic multi-service workload generator.

A topology file names the services, the calls between them and the
workload. Every request is simulated as a depth-first walk of the call graph
on a virtual clock: a span spends half its own latency before calling its
children one after another, then the rest after them. Each service records
through its own SDK instance and its own (possibly offset) clock, and the
harness keeps the true structure and timing of every request alongside the
telemetry, so pipelines can be checked against exact answers.

Example topology::

    [service.frontend]
    version = 1.4.0
    node_label = node-a

    [service.cart]
    node_label = node-b
    clock_offset_us = 250000

    [call.frontend.cart]
    operation = get_cart
    latency = triangular:2000,5000,20000
    error_probability = 0.01

    [workload]
    requests = 1000
    arrival_rate = 50
    ingress = frontend
    operation = GET /
    latency = fixed:1000
    seed = 7

    [head]
    default = 1.0

    [node.node-a]
    cpu = 40
"""

from __future__ import annotations

import configparser
import dataclasses
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from .clock import OffsetClock, VirtualClock
from .infra import InfraExporter, LoadProfile, Resource, SimulatedProbe
from .model import IdSource, Level, SpanId, Status, TraceId, pct_decode, pct_encode
from .sampling import SamplingPolicy, head_decide
from .sdk import ExportBuffer, Registry, RoutingSink, SdkConfig, Telemetry, drain

SERVICE_NAME = re.compile(r"[a-z][a-z0-9_-]*")
INFRA_INTERVAL_S = 10
CORPUS_FILES = ("spans.txt", "logs.txt", "metrics.txt", "truth.txt")


class InvalidTopology(ValueError):
    pass


class UnknownService(KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown service: {self.name}"


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Latency:
    """``fixed:N`` or ``triangular:lo,mode,hi`` in microseconds."""

    kind: str
    params: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.kind == "fixed" and len(self.params) == 1 and self.params[0] >= 0:
            return
        if self.kind == "triangular" and len(self.params) == 3:
            lo, mode, hi = self.params
            if 0 <= lo <= mode <= hi:
                return
        raise InvalidTopology(f"bad latency {self}")

    @classmethod
    def parse(cls, text: str) -> Latency:
        kind, _, args = text.strip().partition(":")
        try:
            params = tuple(int(a) for a in args.split(","))
        except ValueError:
            raise InvalidTopology(f"bad latency {text!r}") from None
        return cls(kind, params)

    def draw(self, rng: random.Random) -> int:
        if self.kind == "fixed":
            return self.params[0]
        lo, mode, hi = self.params
        return round(rng.triangular(lo, hi, mode))

    def __str__(self) -> str:
        return f"{self.kind}:{','.join(map(str, self.params))}"


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    version: str = ""
    node_label: str = ""
    clock_offset_us: int = 0


@dataclass(frozen=True)
class CallSpec:
    caller: str
    callee: str
    operation: str
    latency: Latency
    error_probability: float = 0.0


@dataclass(frozen=True)
class Workload:
    requests: int
    arrival_rate: float
    ingress: tuple[str, ...]
    seed: int
    operation: str = "request"
    latency: Latency = Latency("fixed", (1000,))
    error_probability: float = 0.0
    user_ids: int = 0  # tag roots with user.id drawn from 1..user_ids


@dataclass(frozen=True)
class TopologyConfig:
    services: tuple[ServiceSpec, ...]
    calls: tuple[CallSpec, ...]
    workload: Workload
    policy: SamplingPolicy = field(default_factory=SamplingPolicy.keep_all)
    nodes: dict[str, dict[Resource, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate(self)

    def service(self, name: str) -> ServiceSpec:
        for s in self.services:
            if s.name == name:
                return s
        raise UnknownService(name)

    def children(self, caller: str) -> list[CallSpec]:
        return [c for c in self.calls if c.caller == caller]

    @classmethod
    def parse(cls, text: str) -> TopologyConfig:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise InvalidTopology(str(e)) from e
        services, calls, nodes = [], [], {}
        try:
            for name in cp.sections():
                sec = cp[name]
                kind, _, rest = name.partition(".")
                if kind == "service":
                    services.append(
                        ServiceSpec(rest, sec.get("version", ""), sec.get("node_label", ""), sec.getint("clock_offset_us", 0))
                    )
                elif kind == "call":
                    caller, _, callee = rest.partition(".")
                    calls.append(
                        CallSpec(
                            caller,
                            callee,
                            sec.get("operation", callee),
                            Latency.parse(sec.get("latency", "fixed:1000")),
                            sec.getfloat("error_probability", 0.0),
                        )
                    )
                elif kind == "node":
                    nodes[rest] = {Resource(k): float(v) for k, v in sec.items()}
                elif name not in ("workload", "head"):
                    raise InvalidTopology(f"unknown section [{name}]")
            if not cp.has_section("workload"):
                raise InvalidTopology("missing [workload] section")
            w = cp["workload"]
            if "seed" not in w:
                raise InvalidTopology("workload.seed is required")
            workload = Workload(
                requests=w.getint("requests", 1),
                arrival_rate=w.getfloat("arrival_rate", 1.0),
                ingress=tuple(s.strip() for s in w.get("ingress", "").split(",") if s.strip()),
                seed=w.getint("seed"),
                operation=w.get("operation", "request"),
                latency=Latency.parse(w.get("latency", "fixed:1000")),
                error_probability=w.getfloat("error_probability", 0.0),
                user_ids=w.getint("user_ids", 0),
            )
            head = dict(cp["head"]) if cp.has_section("head") else {}
            default = float(head.pop("default", 1.0))
            policy = SamplingPolicy({k: float(v) for k, v in head.items()}, default)
        except (ValueError, KeyError) as e:
            if isinstance(e, InvalidTopology):
                raise
            raise InvalidTopology(str(e)) from e
        return cls(tuple(services), tuple(calls), workload, policy, nodes)

    @classmethod
    def load(cls, path: str | Path) -> TopologyConfig:
        return cls.parse(Path(path).read_text())

    def to_text(self) -> str:
        out = []
        for s in self.services:
            out += [f"[service.{s.name}]", f"version = {s.version}", f"node_label = {s.node_label}",
                    f"clock_offset_us = {s.clock_offset_us}", ""]
        for c in self.calls:
            out += [f"[call.{c.caller}.{c.callee}]", f"operation = {c.operation}", f"latency = {c.latency}",
                    f"error_probability = {c.error_probability!r}", ""]
        w = self.workload
        out += ["[workload]", f"requests = {w.requests}", f"arrival_rate = {w.arrival_rate!r}",
                f"ingress = {', '.join(w.ingress)}", f"seed = {w.seed}", f"operation = {w.operation}",
                f"latency = {w.latency}", f"error_probability = {w.error_probability!r}", f"user_ids = {w.user_ids}", ""]
        out += ["[head]", f"default = {self.policy.default_rate!r}"]
        out += [f"{k} = {v!r}" for k, v in sorted(self.policy.head_rates.items())] + [""]
        for label, levels in sorted(self.nodes.items()):
            out += [f"[node.{label}]"] + [f"{r.value} = {v!r}" for r, v in levels.items()] + [""]
        return "\n".join(out)


def validate(cfg: TopologyConfig) -> None:
    names = [s.name for s in cfg.services]
    if len(set(names)) != len(names):
        raise InvalidTopology("duplicate service")
    for n in names:
        if not SERVICE_NAME.fullmatch(n):
            raise InvalidTopology(f"bad service name {n!r}")
    known = set(names)
    seen_edges = set()
    for c in cfg.calls:
        for end in (c.caller, c.callee):
            if end not in known:
                raise InvalidTopology(f"call references unknown service {end!r}")
        if not 0.0 <= c.error_probability <= 1.0:
            raise InvalidTopology(f"error_probability out of range on {c.caller}->{c.callee}")
        if (c.caller, c.callee) in seen_edges:
            raise InvalidTopology(f"duplicate call {c.caller}->{c.callee}")
        seen_edges.add((c.caller, c.callee))
    w = cfg.workload
    if not w.ingress:
        raise InvalidTopology("workload.ingress is required")
    for s in w.ingress:
        if s not in known:
            raise InvalidTopology(f"unknown ingress service {s!r}")
    if w.requests < 0 or w.arrival_rate <= 0 or not 0.0 <= w.error_probability <= 1.0 or w.user_ids < 0:
        raise InvalidTopology("bad workload parameters")
    # cycle check by DFS colouring
    state: dict[str, int] = {}

    def visit(n: str) -> None:
        state[n] = 1
        for c in cfg.calls:
            if c.caller != n:
                continue
            if state.get(c.callee) == 1:
                raise InvalidTopology(f"cycle through {n}->{c.callee}")
            if c.callee not in state:
                visit(c.callee)
        state[n] = 2

    for n in names:
        if n not in state:
            visit(n)


def inject_skew(cfg: TopologyConfig, service: str, offset_us: int) -> TopologyConfig:
    """A copy of ``cfg`` in which ``service``'s clock runs ``offset_us`` ahead
    (added to any offset it already has)."""
    spec = cfg.service(service)
    shifted = dataclasses.replace(spec, clock_offset_us=spec.clock_offset_us + offset_us)
    services = tuple(shifted if s.name == service else s for s in cfg.services)
    return dataclasses.replace(cfg, services=services)


def canonical_topology() -> TopologyConfig:
    """The seeded five-service shop used for golden outputs."""
    text = resources.files("spanforge").joinpath("data/canonical.topology").read_text()
    return TopologyConfig.parse(text)


# --------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class TruthNode:
    index: int
    parent: int | None
    service: str
    operation: str
    start: int  # true time, µs
    duration: int
    status: Status
    span_id: SpanId


@dataclass
class RequestTruth:
    trace_id: TraceId
    index: int
    ingress: str
    sampled: bool
    nodes: list[TruthNode] = field(default_factory=list)

    @property
    def has_error(self) -> bool:
        return any(n.status is Status.ERROR for n in self.nodes)

    @property
    def root(self) -> TruthNode:
        return self.nodes[0]

    def lines(self) -> list[str]:
        return [
            " ".join(
                [
                    "TRUTH",
                    self.trace_id.hex,
                    str(self.index),
                    self.ingress,
                    "1" if self.sampled else "0",
                    str(n.index),
                    "-" if n.parent is None else str(n.parent),
                    n.service,
                    pct_encode(n.operation),
                    str(n.start),
                    str(n.duration),
                    n.status.value,
                    n.span_id.hex,
                ]
            )
            for n in self.nodes
        ]


def parse_truth(lines: Iterable[str]) -> list[RequestTruth]:
    out: dict[TraceId, RequestTruth] = {}
    for line in lines:
        if not line:
            continue
        f = line.split(" ")
        if len(f) != 13 or f[0] != "TRUTH":
            raise ValueError(f"bad truth line {line!r}")
        tid = TraceId.from_hex(f[1])
        req = out.get(tid)
        if req is None:
            req = out[tid] = RequestTruth(tid, int(f[2]), f[3], f[4] == "1")
        req.nodes.append(
            TruthNode(
                int(f[5]),
                None if f[6] == "-" else int(f[6]),
                f[7],
                pct_decode(f[8]),
                int(f[9]),
                int(f[10]),
                Status(f[11]),
                SpanId.from_hex(f[12]),
            )
        )
    return sorted(out.values(), key=lambda r: r.index)


# --------------------------------------------------------------------------
# corpus


@dataclass
class TelemetryCorpus:
    spans: list[str] = field(default_factory=list)
    logs: list[str] = field(default_factory=list)
    metrics: list[str] = field(default_factory=list)
    truth: list[RequestTruth] = field(default_factory=list)
    registries: dict[str, Registry] = field(default_factory=dict)  # per service, then per node

    def request_counts(self) -> Counter:
        """True calls per (service, operation), sampled or not."""
        return Counter((n.service, n.operation) for r in self.truth for n in r.nodes)

    def error_counts(self) -> Counter:
        return Counter((n.service, n.operation) for r in self.truth for n in r.nodes if n.status is Status.ERROR)

    def truth_lines(self) -> list[str]:
        return [line for r in self.truth for line in r.lines()]

    def write(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, lines in zip(CORPUS_FILES, (self.spans, self.logs, self.metrics, self.truth_lines())):
            d.joinpath(name).write_text("".join(line + "\n" for line in lines))
        return d

    @classmethod
    def read(cls, directory: str | Path) -> TelemetryCorpus:
        d = Path(directory)

        def lines(name: str) -> list[str]:
            p = d / name
            return p.read_text().splitlines() if p.exists() else []

        return cls(lines("spans.txt"), lines("logs.txt"), lines("metrics.txt"), parse_truth(lines("truth.txt")))


# --------------------------------------------------------------------------
# simulation


class _Sim:
    def __init__(self, cfg: TopologyConfig) -> None:
        self.cfg = cfg
        self.clock = VirtualClock(0)
        self.rng = random.Random(cfg.workload.seed)
        self.ids = IdSource(cfg.workload.seed)
        self.corpus = TelemetryCorpus()
        self.sink = RoutingSink(
            {"SPAN": _Append(self.corpus.spans), "LOG": _Append(self.corpus.logs), "METRIC": _Append(self.corpus.metrics)}
        )
        self.telemetry: dict[str, Telemetry] = {}
        for s in cfg.services:
            tel = Telemetry(
                SdkConfig(s.name, s.version, f"{s.name}-0", s.node_label, buffer_capacity=1 << 20),
                OffsetClock(self.clock, s.clock_offset_us),
                self.ids,
                head_sampler=self._head_sampler(s.name),
            )
            self.telemetry[s.name] = tel
            self.corpus.registries[s.name] = tel.metrics
        self.infra_clock = VirtualClock(0)
        self.infra: list[tuple[InfraExporter, ExportBuffer]] = []
        for label, levels in sorted(cfg.nodes.items()):
            buf = ExportBuffer(1 << 20)
            reg = Registry(self.infra_clock, buf)
            profile = LoadProfile({r: LoadProfile.flat(v, [r]).segments[r] for r, v in levels.items()})
            probe = SimulatedProbe(profile, seed=cfg.workload.seed)
            tags = {"node.label": label, "instance.id": label}
            exp = InfraExporter(probe, reg, tags, levels.keys(), INFRA_INTERVAL_S, self.infra_clock)
            self.infra.append((exp, buf))
            self.corpus.registries[f"node:{label}"] = reg
        self.next_infra_ms = INFRA_INTERVAL_S * 1000

    def _head_sampler(self, service: str):
        policy = self.cfg.policy
        return lambda tid: head_decide(policy, service, tid)

    def run(self) -> TelemetryCorpus:
        w = self.cfg.workload
        for i in range(w.requests):
            arrival = round(i * 1_000_000 / w.arrival_rate)
            self._sample_infra(arrival // 1000)
            # single-threaded loop: a request starts once the previous one ends
            self.clock.set(max(arrival, self.clock()))
            self._request(i, w.ingress[i % len(w.ingress)])
            self._drain()
        self._sample_infra(self.clock() // 1000, final=True)
        return self.corpus

    def _sample_infra(self, now_ms: int, final: bool = False) -> None:
        """Sample every node at each interval boundary up to ``now_ms`` (at
        the end, up to the boundary closing the last partial interval)."""
        if not self.infra:
            return
        step = INFRA_INTERVAL_S * 1000
        limit = now_ms + step - 1 if final else now_ms
        while self.next_infra_ms <= limit:
            self.infra_clock.set(self.next_infra_ms * 1000)
            for exp, _ in self.infra:
                exp.sample(self.next_infra_ms)
            self.next_infra_ms += step
        for _, buf in self.infra:
            drain(buf, self.sink)

    def _drain(self) -> None:
        for tel in self.telemetry.values():
            drain(tel.buffer, self.sink)

    def _request(self, index: int, ingress: str) -> None:
        w = self.cfg.workload
        tags = {}
        if w.user_ids:
            tags["user.id"] = str(self.rng.randint(1, w.user_ids))
        error = self.rng.random() < w.error_probability
        tel = self.telemetry[ingress]
        span, ctx = tel.tracer.start_span(None, w.operation, tags)
        truth = RequestTruth(span.trace_id, index, ingress, span.sampled)
        self._visit(ingress, span, ctx, w.operation, w.latency.draw(self.rng), error, None, truth)
        self.corpus.truth.append(truth)

    def _visit(self, service, span, ctx, operation, self_latency, error, parent_idx, truth) -> None:
        tel = self.telemetry[service]
        node_idx = len(truth.nodes)
        truth.nodes.append(None)  # placeholder keeps preorder numbering
        start = self.clock()
        tel.tracer.log(span, Level.INFO, f"{operation} started")
        pre = self_latency // 2
        self.clock.advance(pre)
        for call in self.cfg.children(service):
            latency = call.latency.draw(self.rng)
            failed = self.rng.random() < call.error_probability
            child, child_ctx = self.telemetry[call.callee].tracer.start_span(ctx, call.operation)
            self._visit(call.callee, child, child_ctx, call.operation, latency, failed, node_idx, truth)
        self.clock.advance(self_latency - pre)
        status = Status.ERROR if error else Status.OK
        if error:
            tel.tracer.log(span, Level.ERROR, f"{operation} failed")
        done = tel.tracer.finish_span(span, status)
        tel.red.record(operation, done.duration / 1000, error)
        truth.nodes[node_idx] = TruthNode(
            node_idx, parent_idx, service, operation, start, self.clock() - start, status, span.span_id
        )


class _Append:
    def __init__(self, target: list[str]) -> None:
        self.target = target

    def send(self, lines) -> None:
        self.target.extend(lines)


def run(cfg: TopologyConfig) -> TelemetryCorpus:
    """Simulate the workload; same config, same corpus, byte for byte."""
    return _Sim(cfg).run()


__all__ = [
    "CallSpec",
    "InvalidTopology",
    "Latency",
    "RequestTruth",
    "ServiceSpec",
    "TelemetryCorpus",
    "TopologyConfig",
    "TruthNode",
    "UnknownService",
    "Workload",
    "canonical_topology",
    "inject_skew",
    "parse_truth",
    "run",
]
