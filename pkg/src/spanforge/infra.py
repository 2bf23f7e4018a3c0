"""Host resource sampling and USE-method metrics.

Probes produce one :class:`ResourceSnapshot` per resource per interval. The
simulated probe replays a load profile so results are reproducible; the
``/proc`` probe reads the local Linux host. Snapshots become three series per
resource: ``<r>_utilization_percent``, ``<r>_saturation`` and
``<r>_errors_total``.

Profile files have one section per resource and one segment per line, times
in seconds from the profile start and load in percent::

    [cpu]
    0 60 40
    60 90 95 4      # optional queue depth
    90 120 30 0 2   # optional errors per interval
"""

from __future__ import annotations

import logging
import random
from importlib import resources
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .clock import Clock, system_clock
from .model import MetricKind, MetricSample, TagSet

log = logging.getLogger(__name__)


class Resource(str, Enum):
    CPU = "cpu"
    MEMORY = "memory"
    DISK = "disk"
    NETWORK = "network"


class ProbeUnavailable(RuntimeError):
    def __init__(self, resource: Resource, reason: str = "") -> None:
        super().__init__(f"{resource.value}: {reason or 'probe unavailable'}")
        self.resource = resource


@dataclass(frozen=True)
class ResourceSnapshot:
    resource: Resource
    timestamp: int  # ms, end of the window
    busy_time: int  # ms
    window: int  # ms
    queue_depth: int = 0
    error_count: int = 0
    capacity: float = 100.0
    used: float = 0.0
    node_tags: TagSet = field(default_factory=TagSet)

    def __post_init__(self) -> None:
        if self.window <= 0 or not 0 <= self.busy_time <= self.window:
            raise ValueError("busy_time must lie in [0, window]")
        if self.used > self.capacity:
            raise ValueError("used exceeds capacity")
        if self.queue_depth < 0 or self.error_count < 0:
            raise ValueError("queue depth and error count must be >= 0")

    @property
    def utilization(self) -> float:
        return 100.0 * self.busy_time / self.window


def to_use_metrics(snap: ResourceSnapshot) -> list[MetricSample]:
    r = snap.resource.value
    return [
        MetricSample(f"{r}_utilization_percent", MetricKind.GAUGE, snap.utilization, snap.timestamp, snap.node_tags),
        MetricSample(f"{r}_saturation", MetricKind.GAUGE, float(snap.queue_depth), snap.timestamp, snap.node_tags),
        MetricSample(f"{r}_errors_total", MetricKind.COUNTER, float(snap.error_count), snap.timestamp, snap.node_tags),
    ]


# --------------------------------------------------------------------------
# probes


class Probe(Protocol):
    def snapshot(self, resource: Resource, t_ms: int, window_ms: int, node_tags: TagSet) -> ResourceSnapshot: ...


@dataclass(frozen=True)
class Segment:
    start_s: float
    end_s: float
    level: float  # percent
    queue_depth: int = 0
    errors: int = 0  # per interval


class LoadProfile:
    def __init__(self, segments: Mapping[Resource, Sequence[Segment]]) -> None:
        self.segments = {Resource(r): sorted(s, key=lambda g: g.start_s) for r, s in segments.items()}
        for r, segs in self.segments.items():
            for g in segs:
                if not 0 <= g.level <= 100 or g.end_s <= g.start_s:
                    raise ValueError(f"bad {r.value} segment {g}")

    @classmethod
    def flat(cls, level: float, resources: Iterable[Resource] = tuple(Resource), duration_s: float = float("inf")) -> LoadProfile:
        return cls({r: [Segment(0, duration_s, level)] for r in resources})

    @classmethod
    def parse(cls, text: str) -> LoadProfile:
        segments: dict[Resource, list[Segment]] = {}
        current: Resource | None = None
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = Resource(line[1:-1].strip().lower())
                segments.setdefault(current, [])
                continue
            if current is None:
                raise ValueError(f"line {n}: segment outside a [resource] section")
            parts = line.split()
            if not 3 <= len(parts) <= 5:
                raise ValueError(f"line {n}: expected 't_start t_end level [queue [errors]]'")
            extra = [int(p) for p in parts[3:]]
            segments[current].append(Segment(float(parts[0]), float(parts[1]), float(parts[2]), *extra))
        return cls(segments)

    @classmethod
    def load(cls, path: str | Path) -> LoadProfile:
        return cls.parse(Path(path).read_text())

    @classmethod
    def bundled(cls, name: str = "spike") -> LoadProfile:
        """A profile shipped with the package (``spike``: a two-interval
        burst over 80 %, later a three-interval one)."""
        return cls.parse(resources.files("spanforge").joinpath(f"data/{name}.profile").read_text())

    def segment_at(self, resource: Resource, t_s: float) -> Segment | None:
        for g in self.segments.get(resource, ()):
            if g.start_s <= t_s < g.end_s:
                return g
        return None


class SimulatedProbe:
    """Replays a :class:`LoadProfile` relative to ``start_ms``.

    The load at the start of each window applies to the whole window. With
    ``jitter`` > 0 the level is perturbed by a seeded uniform draw in
    ``[-jitter, +jitter]`` percentage points. Resources in ``failing`` raise
    :class:`ProbeUnavailable`.
    """

    def __init__(
        self,
        profile: LoadProfile,
        start_ms: int = 0,
        seed: int = 0,
        jitter: float = 0.0,
        capacity: Mapping[Resource, float] | None = None,
        failing: Iterable[Resource] = (),
    ) -> None:
        self.profile = profile
        self.start_ms = start_ms
        self.jitter = jitter
        self.capacity = {r: 100.0 for r in Resource} | dict(capacity or {})
        self.failing = set(failing)
        self._rngs = {r: random.Random(f"{seed}:{r.value}") for r in Resource}
        self._errors = {r: 0 for r in Resource}

    def snapshot(self, resource: Resource, t_ms: int, window_ms: int, node_tags: TagSet) -> ResourceSnapshot:
        if resource in self.failing:
            raise ProbeUnavailable(resource, "simulated failure")
        window_start_s = (t_ms - window_ms - self.start_ms) / 1000.0
        seg = self.profile.segment_at(resource, window_start_s)
        level = seg.level if seg else 0.0
        if self.jitter:
            level += self._rngs[resource].uniform(-self.jitter, self.jitter)
        level = min(100.0, max(0.0, level))
        busy = min(window_ms, max(0, round(level * window_ms / 100)))
        if seg:
            self._errors[resource] += seg.errors
        cap = self.capacity[resource]
        return ResourceSnapshot(
            resource,
            t_ms,
            busy,
            window_ms,
            queue_depth=seg.queue_depth if seg else 0,
            error_count=self._errors[resource],
            capacity=cap,
            used=cap * busy / window_ms,
            node_tags=node_tags,
        )


class ProcProbe:
    """CPU and memory from Linux ``/proc``; other resources are unavailable."""

    def __init__(self, root: str | Path = "/proc") -> None:
        self.root = Path(root)
        self._last_cpu: tuple[int, int] | None = None

    def _cpu_times(self) -> tuple[int, int]:
        fields = self.root.joinpath("stat").read_text().splitlines()[0].split()[1:]
        ticks = [int(x) for x in fields]
        idle = ticks[3] + (ticks[4] if len(ticks) > 4 else 0)
        return sum(ticks), idle

    def snapshot(self, resource: Resource, t_ms: int, window_ms: int, node_tags: TagSet) -> ResourceSnapshot:
        try:
            if resource is Resource.CPU:
                total, idle = self._cpu_times()
                prev, self._last_cpu = self._last_cpu, (total, idle)
                frac = 0.0
                if prev and total > prev[0]:
                    frac = 1.0 - (idle - prev[1]) / (total - prev[0])
                running = int(self.root.joinpath("loadavg").read_text().split()[3].split("/")[0])
                busy = round(max(0.0, min(1.0, frac)) * window_ms)
                return ResourceSnapshot(resource, t_ms, busy, window_ms, queue_depth=max(0, running - 1), node_tags=node_tags)
            if resource is Resource.MEMORY:
                info = {}
                for line in self.root.joinpath("meminfo").read_text().splitlines():
                    k, _, v = line.partition(":")
                    info[k] = int(v.split()[0])
                cap, avail = float(info["MemTotal"]), float(info.get("MemAvailable", info["MemFree"]))
                used = cap - avail
                busy = round(used / cap * window_ms)
                return ResourceSnapshot(resource, t_ms, busy, window_ms, capacity=cap, used=used, node_tags=node_tags)
        except (OSError, KeyError, ValueError, IndexError) as e:
            raise ProbeUnavailable(resource, str(e)) from e
        raise ProbeUnavailable(resource, "not supported by /proc probe")


# --------------------------------------------------------------------------
# exporter


class InfraExporter:
    """Samples each configured resource every interval and records USE
    metrics in an SDK registry (so they go out by push or scrape like any
    other instrument). Probe failures increment
    ``probe_errors_total{resource}`` and leave other resources unaffected."""

    def __init__(
        self,
        probe: Probe,
        registry,
        node_tags: Mapping[str, str] | TagSet | None = None,
        resources: Iterable[Resource] = (Resource.CPU, Resource.MEMORY, Resource.DISK, Resource.NETWORK),
        interval_s: int = 10,
        clock: Clock = system_clock,
    ) -> None:
        self.probe = probe
        self.registry = registry
        self.node_tags = TagSet.of(node_tags)
        self.resources = [Resource(r) for r in resources]
        self.interval_ms = int(interval_s * 1000)
        self.clock = clock
        self._exported_errors: dict[Resource, int] = {}
        self._probe_errors = registry.counter("probe_errors_total", self.node_tags)

    def sample(self, t_ms: int | None = None) -> list[ResourceSnapshot]:
        t_ms = self.clock() // 1000 if t_ms is None else t_ms
        snaps = []
        for r in self.resources:
            try:
                snap = self.probe.snapshot(r, t_ms, self.interval_ms, self.node_tags)
            except ProbeUnavailable as e:
                log.debug("probe error: %s", e)
                self._probe_errors.add(1, {"resource": r.value})
                continue
            self.export(snap)
            snaps.append(snap)
        return snaps

    def export(self, snap: ResourceSnapshot) -> None:
        util, sat, errs = to_use_metrics(snap)
        self.registry.gauge(util.name, self.node_tags).set(util.value)
        self.registry.gauge(sat.name, self.node_tags).set(sat.value)
        counter = self.registry.counter(errs.name, self.node_tags)
        prev = self._exported_errors.get(snap.resource, 0)
        counter.add(max(0, snap.error_count - prev))
        self._exported_errors[snap.resource] = max(prev, snap.error_count)


# --------------------------------------------------------------------------
# scaling signals


class InsufficientData(ValueError):
    pass


class ScalingSignal(str, Enum):
    NONE = "none"
    SCALE_OUT = "scale_out"
    SCALE_IN = "scale_in"


@dataclass(frozen=True)
class ScalingRule:
    metric: str
    threshold: float
    sustain_intervals: int = 3
    percent: bool = True

    def __post_init__(self) -> None:
        if self.sustain_intervals < 1:
            raise ValueError("sustain_intervals must be >= 1")
        if self.percent and not 0 < self.threshold <= 100:
            raise ValueError("percent threshold must be in (0, 100]")


@dataclass(frozen=True)
class ScalingEvent:
    """Advisory only; nothing acts on it."""

    timestamp: int
    signal: ScalingSignal
    metric: str
    value: float


def evaluate_scaling_signal(values: Sequence[float], rule: ScalingRule) -> ScalingSignal:
    """Signal for the most recent ``sustain_intervals`` points.

    Scale out when all are >= threshold, scale in when all are <= half the
    threshold.
    """
    n = rule.sustain_intervals
    if len(values) < n:
        raise InsufficientData(f"need {n} points, have {len(values)}")
    recent = values[-n:]
    if all(v >= rule.threshold for v in recent):
        return ScalingSignal.SCALE_OUT
    if all(v <= rule.threshold / 2 for v in recent):
        return ScalingSignal.SCALE_IN
    return ScalingSignal.NONE


def scaling_events(points: Sequence[tuple[int, float]], rule: ScalingRule) -> list[ScalingEvent]:
    """Scan a series and emit one event per sustained run.

    An event fires at the point completing ``sustain_intervals`` consecutive
    qualifying points; the run must break before the same signal fires again.
    """
    if len(points) < rule.sustain_intervals:
        raise InsufficientData(f"need {rule.sustain_intervals} points, have {len(points)}")
    events = []
    out_run = in_run = 0
    for ts, v in points:
        out_run = out_run + 1 if v >= rule.threshold else 0
        in_run = in_run + 1 if v <= rule.threshold / 2 else 0
        if out_run == rule.sustain_intervals:
            events.append(ScalingEvent(ts, ScalingSignal.SCALE_OUT, rule.metric, v))
        if in_run == rule.sustain_intervals:
            events.append(ScalingEvent(ts, ScalingSignal.SCALE_IN, rule.metric, v))
    return events
