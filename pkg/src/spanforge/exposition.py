"""Text exposition format served to scrapers.

One series per line::

    name{key="value",...} value timestamp_ms

Label values escape backslash, double quote and newline. The timestamp is
optional when parsing; readers substitute the scrape time.
"""

from __future__ import annotations

import math
import re
from typing import NamedTuple

from .model import MalformedLine, TagSet, format_float, parse_float

TAG_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")
_SERIES = re.compile(r"(?P<name>[a-z][a-z0-9_.]*)(?:\{(?P<labels>.*)\})? (?P<value>\S+)(?: (?P<ts>-?[0-9]+))?")
_LABEL = re.compile(r'(?P<key>[A-Za-z_][A-Za-z0-9_.\-]*)="(?P<val>(?:[^"\\]|\\.)*)"')


class ExposedSeries(NamedTuple):
    name: str
    tags: TagSet
    value: float
    timestamp: int | None


def _escape(v: str) -> str:
    return v.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def _unescape(v: str) -> str:
    return re.sub(r"\\(.)", lambda m: "\n" if m.group(1) == "n" else m.group(1), v)


def format_value(value: float) -> str:
    if math.isinf(value):
        return "+Inf" if value > 0 else "-Inf"
    return format_float(value)


def render_series(name: str, tags: TagSet, value: float, timestamp: int | None) -> str:
    labels = ",".join(f'{k}="{_escape(v)}"' for k, v in tags)
    head = f"{name}{{{labels}}}" if labels else name
    tail = f" {timestamp}" if timestamp is not None else ""
    return f"{head} {format_value(value)}{tail}"


def _parse_value(text: str) -> float:
    if text in ("+Inf", "Inf"):
        return math.inf
    if text == "-Inf":
        return -math.inf
    return parse_float(text)


def parse_series(line: str) -> ExposedSeries:
    m = _SERIES.fullmatch(line)
    if not m:
        raise MalformedLine(f"bad exposition line {line[:80]!r}")
    pairs = []
    labels = m.group("labels")
    if labels:
        pos = 0
        while True:
            lm = _LABEL.match(labels, pos)
            if not lm:
                raise MalformedLine(f"bad labels {labels[:80]!r}")
            pairs.append((lm.group("key"), _unescape(lm.group("val"))))
            pos = lm.end()
            if pos == len(labels):
                break
            if labels[pos] != ",":
                raise MalformedLine(f"bad labels {labels[:80]!r}")
            pos += 1
    try:
        tags = TagSet.of(pairs)
    except ValueError as e:
        raise MalformedLine(str(e)) from None
    ts = m.group("ts")
    return ExposedSeries(m.group("name"), tags, _parse_value(m.group("value")), int(ts) if ts is not None else None)


def parse_exposition(body: str) -> list[ExposedSeries]:
    """Parse a whole body; blank lines and ``#`` comments are skipped."""
    out = []
    for line in body.split("\n"):
        if not line or line.startswith("#"):
            continue
        out.append(parse_series(line))
    return out
