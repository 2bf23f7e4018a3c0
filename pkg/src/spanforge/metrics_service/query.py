"""Range queries over the series store.

Within each time bucket (and group), a cumulative counter contributes only
its latest value in that bucket; gauges and histogram observations
contribute every point. The aggregate then runs over those contributions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

from ..model import MetricKind, TagSet
from .store import Series, SeriesStore


class UnknownMetric(KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown metric: {self.name}"


class EmptyRange(ValueError):
    pass


_OPS = ("avg", "sum", "min", "max", "count", "pct")
_PCT = re.compile(r"(?:pct|p)\(?([0-9]+(?:\.[0-9]+)?)\)?")


@dataclass(frozen=True)
class Aggregate:
    op: str
    p: float | None = None

    def __post_init__(self) -> None:
        if self.op not in _OPS:
            raise ValueError(f"unknown aggregate {self.op!r}")
        if self.op == "pct" and not (self.p is not None and 0 < self.p < 100):
            raise ValueError("percentile must be in (0, 100)")

    @classmethod
    def parse(cls, text: str) -> Aggregate:
        t = text.strip().lower()
        if t in _OPS and t != "pct":
            return cls(t)
        m = _PCT.fullmatch(t)
        if m:
            return cls("pct", float(m.group(1)))
        raise ValueError(f"unknown aggregate {text!r}")

    @classmethod
    def pct(cls, p: float) -> Aggregate:
        return cls("pct", p)

    def __str__(self) -> str:
        return f"pct({self.p:g})" if self.op == "pct" else self.op


AVG, SUM, MIN, MAX, COUNT = (Aggregate(op) for op in ("avg", "sum", "min", "max", "count"))


class Row(NamedTuple):
    group: TagSet
    timestamp: int
    value: float


def nearest_rank(values: Sequence[float], p: float) -> float:
    """The ceil(p/100 * n)-th smallest value."""
    if not values:
        raise ValueError("no values")
    ordered = sorted(values)
    rank = math.ceil(Fraction(str(p)) * len(ordered) / 100)
    return ordered[max(rank, 1) - 1]


def aggregate_values(values: Sequence[float], agg: Aggregate) -> float:
    if agg.op == "count":
        return float(len(values))
    if agg.op == "sum":
        return math.fsum(values)
    if agg.op == "avg":
        return math.fsum(values) / len(values)
    if agg.op == "min":
        return min(values)
    if agg.op == "max":
        return max(values)
    return nearest_rank(values, agg.p)


def match_series(store: SeriesStore, name: str, tag_filter: Mapping[str, str] | None) -> list[Series]:
    if name not in store:
        raise UnknownMetric(name)
    flt = dict(tag_filter or {})
    return [s for s in store.series(name) if all(s.key.tags.get(k) == v for k, v in flt.items())]


def group_of(tags: TagSet, group_by: Iterable[str]) -> TagSet:
    return TagSet.of({k: tags.get(k, "") for k in group_by})


def query_range(
    store: SeriesStore,
    name: str,
    tag_filter: Mapping[str, str] | None,
    start_ms: int,
    end_ms: int,
    aggregate: Aggregate | str = AVG,
    group_by: Iterable[str] = (),
    step_ms: int | None = None,
) -> list[Row]:
    """Aggregate matching series over [start_ms, end_ms).

    Without ``step_ms`` the whole range is one bucket stamped ``start_ms``;
    otherwise buckets align to multiples of ``step_ms``. Rows are sorted by
    (group, timestamp) and only non-empty buckets appear.
    """
    if end_ms <= start_ms:
        raise EmptyRange(f"empty range [{start_ms}, {end_ms})")
    if isinstance(aggregate, str):
        aggregate = Aggregate.parse(aggregate)
    if step_ms is not None and step_ms <= 0:
        raise ValueError("step must be positive")
    group_by = tuple(group_by)
    cells: dict[tuple[TagSet, int], list[float]] = {}
    for s in match_series(store, name, tag_filter):
        group = group_of(s.key.tags, group_by)
        per_bucket: dict[int, list[float]] = {}
        for ts, v in s.points(store.tiers, start_ms, end_ms):
            b = start_ms if step_ms is None else ts - ts % step_ms
            per_bucket.setdefault(b, []).append(v)
        for b, vals in per_bucket.items():
            contrib = vals[-1:] if s.kind is MetricKind.COUNTER else vals
            cells.setdefault((group, b), []).extend(contrib)
    return [Row(g, b, aggregate_values(cells[(g, b)], aggregate)) for g, b in sorted(cells)]


def increase(points: Sequence[tuple[int, float]], start_ms: int, end_ms: int) -> float:
    """Counter increase over [start_ms, end_ms).

    The baseline is the last point before the window, or 0 when the series
    starts inside it. A drop in value is a restart counting again from 0.
    """
    prev = 0.0
    total = 0.0
    for ts, v in points:
        if ts >= end_ms:
            break
        if ts < start_ms:
            prev = v
            continue
        total += v - prev if v >= prev else v
        prev = v
    return total
