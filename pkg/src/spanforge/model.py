"""Telemetry value types and their line encodings.

Three line kinds travel between components, one record per ``\\n``-terminated
UTF-8 line::

    SPAN <trace_id> <span_id> <parent|-> <service> <operation> <start_us> <duration_us> <OK|ERROR> <tags>
    LOG <trace_id> <span_id> <timestamp_us> <LEVEL> <message>
    METRIC <name> <C|G|H> <value> <timestamp_ms> <tags>

Text fields are percent-encoded over the reserved set ``% , = space \\n \\t``.
Tags render as comma-joined ``key=value`` pairs sorted by key, or ``-`` when
empty.
"""

from __future__ import annotations

import math
import random
import re
import secrets
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Union


class MalformedLine(ValueError):
    """A line that no encoder could have produced; drop it and count it."""


# --------------------------------------------------------------------------
# identifiers


@dataclass(frozen=True, order=True)
class TraceId:
    value: int

    def __post_init__(self) -> None:
        if not 0 < self.value < 1 << 128:
            raise ValueError(f"trace id out of range: {self.value!r}")

    @property
    def hex(self) -> str:
        return f"{self.value:032x}"

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(16, "big")

    @classmethod
    def from_hex(cls, text: str) -> TraceId:
        if not _HEX32.fullmatch(text):
            raise ValueError(f"bad trace id: {text!r}")
        return cls(int(text, 16))

    def __str__(self) -> str:
        return self.hex


@dataclass(frozen=True, order=True)
class SpanId:
    value: int

    def __post_init__(self) -> None:
        if not 0 < self.value < 1 << 64:
            raise ValueError(f"span id out of range: {self.value!r}")

    @property
    def hex(self) -> str:
        return f"{self.value:016x}"

    @classmethod
    def from_hex(cls, text: str) -> SpanId:
        if not _HEX16.fullmatch(text):
            raise ValueError(f"bad span id: {text!r}")
        return cls(int(text, 16))

    def __str__(self) -> str:
        return self.hex


_HEX32 = re.compile(r"[0-9a-f]{32}")
_HEX16 = re.compile(r"[0-9a-f]{16}")


class IdSource:
    """Draws trace and span ids.

    With a seed the sequence is reproducible (tests, simulation); without one
    ids come from the OS entropy pool.
    """

    def __init__(self, seed: int | None = None) -> None:
        self._rng = random.Random(seed) if seed is not None else None

    def _bits(self, n: int) -> int:
        while True:
            v = self._rng.getrandbits(n) if self._rng is not None else secrets.randbits(n)
            if v:
                return v

    def trace_id(self) -> TraceId:
        return TraceId(self._bits(128))

    def span_id(self) -> SpanId:
        return SpanId(self._bits(64))


# --------------------------------------------------------------------------
# tags


@dataclass(frozen=True)
class TagSet:
    """Immutable tag mapping kept sorted by key, so equal content compares and
    encodes identically."""

    items: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        keys = [k for k, _ in self.items]
        if keys != sorted(set(keys)):
            raise ValueError("TagSet items must be sorted with unique keys")
        if any(k == "" for k in keys):
            raise ValueError("tag keys must be nonempty")

    @classmethod
    def of(cls, tags: Mapping[str, str] | Iterable[tuple[str, str]] | TagSet | None = None, **kw: str) -> TagSet:
        if isinstance(tags, TagSet) and not kw:
            return tags
        merged: dict[str, str] = {}
        if isinstance(tags, TagSet):
            merged.update(tags.items)
        elif isinstance(tags, Mapping):
            merged.update(tags)
        elif tags is not None:
            for k, v in tags:
                if k in merged:
                    raise ValueError(f"duplicate tag key {k!r}")
                merged[k] = v
        merged.update(kw)
        for k, v in merged.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise TypeError("tag keys and values must be str")
        return cls(tuple(sorted(merged.items())))

    def merge(self, other: Mapping[str, str] | TagSet | None) -> TagSet:
        """Right-biased union."""
        if not other:
            return self
        d = dict(self.items)
        d.update(other.items if isinstance(other, TagSet) else other.items())
        return TagSet(tuple(sorted(d.items())))

    def without(self, *keys: str) -> TagSet:
        return TagSet(tuple((k, v) for k, v in self.items if k not in keys))

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.items:
            if k == key:
                return v
        return default

    def as_dict(self) -> dict[str, str]:
        return dict(self.items)

    def __contains__(self, key: object) -> bool:
        return any(k == key for k, _ in self.items)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __bool__(self) -> bool:
        return bool(self.items)

    def __lt__(self, other: TagSet) -> bool:
        return self.items < other.items


EMPTY_TAGS = TagSet()


# --------------------------------------------------------------------------
# records


class Status(str, Enum):
    OK = "OK"
    ERROR = "ERROR"


class Level(str, Enum):
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARN = "WARN"
    ERROR = "ERROR"


class MetricKind(str, Enum):
    COUNTER = "C"
    GAUGE = "G"
    HISTOGRAM_OBSERVATION = "H"


@dataclass(frozen=True)
class Span:
    trace_id: TraceId
    span_id: SpanId
    parent_span_id: SpanId | None
    service: str
    operation: str
    start: int
    duration: int
    status: Status = Status.OK
    tags: TagSet = field(default_factory=TagSet)

    def __post_init__(self) -> None:
        if self.duration < 0:
            raise ValueError("span duration must be >= 0")
        if self.parent_span_id == self.span_id:
            raise ValueError("span cannot be its own parent")
        if not self.service or not self.operation:
            raise ValueError("service and operation must be nonempty")

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def is_root(self) -> bool:
        return self.parent_span_id is None


@dataclass(frozen=True)
class LogRecord:
    trace_id: TraceId
    span_id: SpanId
    timestamp: int
    level: Level
    message: str


_METRIC_NAME = re.compile(r"[a-z][a-z0-9_.]*")
OVERFLOW_KEY = "__overflow"


@dataclass(frozen=True)
class MetricSample:
    name: str
    kind: MetricKind
    value: float
    timestamp: int
    tags: TagSet = field(default_factory=TagSet)

    def __post_init__(self) -> None:
        if not _METRIC_NAME.fullmatch(self.name):
            raise ValueError(f"bad metric name {self.name!r}")
        if math.isnan(self.value):
            raise ValueError("metric value must not be NaN")
        for k, _ in self.tags:
            if k.startswith("__") and k != OVERFLOW_KEY:
                raise ValueError(f"reserved tag key {k!r}")


Record = Union[Span, LogRecord, MetricSample]


# --------------------------------------------------------------------------
# encoding helpers

_RESERVED = {"%": "%25", ",": "%2C", "=": "%3D", " ": "%20", "\n": "%0A", "\t": "%09"}
_ESCAPE = re.compile(r"[%,= \n\t]")
_PERCENT = re.compile(r"%([0-9A-F]{2})")


def pct_encode(text: str) -> str:
    return _ESCAPE.sub(lambda m: _RESERVED[m.group()], text)


def pct_decode(text: str) -> str:
    """Strict inverse of :func:`pct_encode`; rejects non-canonical input."""
    out = _PERCENT.sub(lambda m: chr(int(m.group(1), 16)), text)
    if pct_encode(out) != text:
        raise MalformedLine(f"non-canonical encoding: {text!r}")
    return out


def encode_tags(tags: TagSet) -> str:
    if not tags:
        return "-"
    return ",".join(f"{pct_encode(k)}={pct_encode(v)}" for k, v in tags)


def decode_tags(text: str) -> TagSet:
    if text == "-":
        return EMPTY_TAGS
    pairs = []
    for part in text.split(","):
        k, sep, v = part.partition("=")
        if not sep:
            raise MalformedLine(f"tag without '=': {part!r}")
        pairs.append((pct_decode(k), pct_decode(v)))
    keys = [k for k, _ in pairs]
    if keys != sorted(set(keys)) or "" in keys:
        raise MalformedLine("tags must be sorted, unique, with nonempty keys")
    return TagSet(tuple(pairs))


def format_float(value: float) -> str:
    """Shortest decimal that round-trips, without a redundant ``.0``."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


_FLOAT = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?|[+-]?(?:inf|Inf|INF)")
_INT = re.compile(r"-?(?:0|[1-9][0-9]*)")
_UINT = re.compile(r"0|[1-9][0-9]*")


def parse_float(text: str) -> float:
    if not _FLOAT.fullmatch(text):
        raise MalformedLine(f"bad number {text!r}")
    return float(text)


def _int(text: str, *, unsigned: bool = False) -> int:
    if not (_UINT if unsigned else _INT).fullmatch(text):
        raise MalformedLine(f"bad integer {text!r}")
    return int(text)


def _ident(text: str) -> str:
    value = pct_decode(text)
    if not value:
        raise MalformedLine("empty identifier")
    return value


def _fields(line: str, kind: str, count: int) -> list[str]:
    if line.endswith("\n"):
        line = line[:-1]
    parts = line.split(" ")
    if parts[0] != kind:
        raise MalformedLine(f"expected {kind} record, got {parts[0][:16]!r}")
    if len(parts) != count:
        raise MalformedLine(f"{kind}: expected {count} fields, got {len(parts)}")
    return parts


def _trace_id(text: str) -> TraceId:
    try:
        return TraceId.from_hex(text)
    except ValueError as e:
        raise MalformedLine(str(e)) from None


def _span_id(text: str) -> SpanId:
    try:
        return SpanId.from_hex(text)
    except ValueError as e:
        raise MalformedLine(str(e)) from None


# --------------------------------------------------------------------------
# SPAN


def encode_span(span: Span) -> str:
    parent = span.parent_span_id.hex if span.parent_span_id else "-"
    return (
        f"SPAN {span.trace_id.hex} {span.span_id.hex} {parent} "
        f"{pct_encode(span.service)} {pct_encode(span.operation)} "
        f"{span.start} {span.duration} {span.status.value} {encode_tags(span.tags)}"
    )


def decode_span(line: str) -> Span:
    _, tid, sid, parent, service, operation, start, duration, status, tags = _fields(line, "SPAN", 10)
    if status not in ("OK", "ERROR"):
        raise MalformedLine(f"unknown status {status!r}")
    span_id = _span_id(sid)
    parent_id = None if parent == "-" else _span_id(parent)
    if parent_id == span_id:
        raise MalformedLine("span is its own parent")
    try:
        return Span(
            trace_id=_trace_id(tid),
            span_id=span_id,
            parent_span_id=parent_id,
            service=_ident(service),
            operation=_ident(operation),
            start=_int(start),
            duration=_int(duration, unsigned=True),
            status=Status(status),
            tags=decode_tags(tags),
        )
    except MalformedLine:
        raise
    except ValueError as e:
        raise MalformedLine(str(e)) from None


# --------------------------------------------------------------------------
# LOG


def encode_log(rec: LogRecord) -> str:
    message = pct_encode(rec.message)
    if message == "":
        message = "-"
    elif message == "-":
        message = "%2D"
    return f"LOG {rec.trace_id.hex} {rec.span_id.hex} {rec.timestamp} {rec.level.value} {message}"


def decode_log(line: str) -> LogRecord:
    _, tid, sid, ts, level, message = _fields(line, "LOG", 6)
    if level not in Level.__members__:
        raise MalformedLine(f"unknown level {level!r}")
    if message == "-":
        text = ""
    elif message == "%2D":
        text = "-"
    else:
        text = pct_decode(message)
        if text == "":
            raise MalformedLine("empty message must be encoded as '-'")
    return LogRecord(_trace_id(tid), _span_id(sid), _int(ts), Level(level), text)


# --------------------------------------------------------------------------
# METRIC


def encode_metric(sample: MetricSample) -> str:
    return (
        f"METRIC {sample.name} {sample.kind.value} {format_float(sample.value)} "
        f"{sample.timestamp} {encode_tags(sample.tags)}"
    )


def decode_metric(line: str) -> MetricSample:
    _, name, kind, value, ts, tags = _fields(line, "METRIC", 6)
    if kind not in ("C", "G", "H"):
        raise MalformedLine(f"unknown metric kind {kind!r}")
    try:
        return MetricSample(name, MetricKind(kind), parse_float(value), _int(ts), decode_tags(tags))
    except MalformedLine:
        raise
    except ValueError as e:
        raise MalformedLine(str(e)) from None


def decode_line(line: str) -> Record:
    """Decode any of the three record kinds by their leading keyword."""
    head = line.split(" ", 1)[0]
    if head == "SPAN":
        return decode_span(line)
    if head == "LOG":
        return decode_log(line)
    if head == "METRIC":
        return decode_metric(line)
    raise MalformedLine(f"unknown record kind {head[:16]!r}")


def encode_record(rec: Record) -> str:
    if isinstance(rec, Span):
        return encode_span(rec)
    if isinstance(rec, LogRecord):
        return encode_log(rec)
    return encode_metric(rec)
