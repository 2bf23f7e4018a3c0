"""Tag-keyed time series with resolution tiers and a per-name cardinality cap.

Tier 0 keeps raw points exactly as written (sorted by timestamp, several
points may share one). Coarser tiers keep one step-aligned bucket per step
holding a running sum/count/min/max/last of the raw points folded into it, so
late folds merge exactly and every tier aggregate is computed over the raw
source points. Cumulative counters always fold with LAST.

Once a name has ``cardinality_limit`` distinct tag sets, further new tag sets
collapse into one ``{__overflow="true"}`` series. For counters the overflow
series accumulates per-source increments, so totals over all series still
equal the ingested totals.
"""

from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from ..model import OVERFLOW_KEY, MetricKind, MetricSample, TagSet

OVERFLOW_TAGS = TagSet(((OVERFLOW_KEY, "true"),))
DEFAULT_CARDINALITY_LIMIT = 1000


class TierAggregate(str, Enum):
    AVG = "avg"
    SUM = "sum"
    MAX = "max"
    MIN = "min"
    LAST = "last"


@dataclass(frozen=True)
class ResolutionTier:
    step_s: int
    retention_s: int
    aggregate: TierAggregate = TierAggregate.AVG

    def __post_init__(self) -> None:
        if self.step_s <= 0 or self.retention_s <= 0:
            raise ValueError("tier step and retention must be positive")


DEFAULT_TIERS = (
    ResolutionTier(10, 30 * 60, TierAggregate.LAST),
    ResolutionTier(3600, 30 * 86400, TierAggregate.AVG),
)


def check_tiers(tiers: Iterable[ResolutionTier]) -> tuple[ResolutionTier, ...]:
    tiers = tuple(tiers)
    if not tiers:
        raise ValueError("at least one tier is required")
    for a, b in zip(tiers, tiers[1:]):
        if b.step_s <= a.step_s:
            raise ValueError("tiers must have increasing steps")
        if b.retention_s < a.retention_s:
            raise ValueError("tier retention must not shrink")
    return tiers


def parse_tiers(text: str) -> tuple[ResolutionTier, ...]:
    """``10s:30m,1h:30d:avg`` style tier list."""
    tiers = []
    for part in text.split(","):
        bits = part.strip().split(":")
        agg = TierAggregate(bits[2]) if len(bits) > 2 else TierAggregate.AVG
        tiers.append(ResolutionTier(parse_duration_s(bits[0]), parse_duration_s(bits[1]), agg))
    return check_tiers(tiers)


_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


def parse_duration_s(text: str) -> int:
    text = text.strip()
    if text and text[-1] in _UNITS:
        return int(text[:-1]) * _UNITS[text[-1]]
    return int(text)


@dataclass(frozen=True, order=True)
class SeriesKey:
    name: str
    tags: TagSet


@dataclass
class Bucket:
    ts: int
    sum: float = 0.0
    count: int = 0
    min: float = float("inf")
    max: float = float("-inf")
    last: float = 0.0
    last_ts: int = -(1 << 62)

    def add(self, ts: int, v: float) -> None:
        self.sum += v
        self.count += 1
        self.min = min(self.min, v)
        self.max = max(self.max, v)
        if ts >= self.last_ts:
            self.last, self.last_ts = v, ts

    def merge(self, other: Bucket) -> None:
        self.sum += other.sum
        self.count += other.count
        self.min = min(self.min, other.min)
        self.max = max(self.max, other.max)
        if other.last_ts >= self.last_ts:
            self.last, self.last_ts = other.last, other.last_ts

    def value(self, agg: TierAggregate) -> float:
        if agg is TierAggregate.AVG:
            return self.sum / self.count
        if agg is TierAggregate.SUM:
            return self.sum
        if agg is TierAggregate.MAX:
            return self.max
        if agg is TierAggregate.MIN:
            return self.min
        return self.last


class Series:
    def __init__(self, key: SeriesKey, kind: MetricKind, n_tiers: int) -> None:
        self.key = key
        self.kind = kind
        self.raw_ts: list[int] = []
        self.raw_values: list[float] = []
        self.tiers: list[dict[int, Bucket]] = [{} for _ in range(n_tiers - 1)]

    def append(self, ts: int, value: float) -> None:
        if not self.raw_ts or ts >= self.raw_ts[-1]:
            self.raw_ts.append(ts)
            self.raw_values.append(value)
        else:
            i = bisect.bisect_right(self.raw_ts, ts)
            self.raw_ts.insert(i, ts)
            self.raw_values.insert(i, value)

    def last_value(self) -> float | None:
        pts = self.points()
        return pts[-1][1] if pts else None

    def raw_points(self) -> list[tuple[int, float]]:
        return list(zip(self.raw_ts, self.raw_values))

    def tier_points(self, tier: int, agg: TierAggregate) -> list[tuple[int, float]]:
        if tier == 0:
            return self.raw_points()
        if self.kind is MetricKind.COUNTER:
            agg = TierAggregate.LAST
        buckets = self.tiers[tier - 1]
        return [(ts, buckets[ts].value(agg)) for ts in sorted(buckets)]

    def points(self, tiers: tuple[ResolutionTier, ...] | None = None, start: int | None = None, end: int | None = None) -> list[tuple[int, float]]:
        """All stored points in [start, end), coarsest tier first on equal
        timestamps."""
        merged: list[tuple[int, int, float]] = []
        for i in range(len(self.tiers), 0, -1):
            agg = tiers[i].aggregate if tiers else TierAggregate.AVG
            rank = len(self.tiers) - i
            merged.extend((ts, rank, v) for ts, v in self.tier_points(i, agg))
        rank0 = len(self.tiers)
        lo = 0 if start is None else bisect.bisect_left(self.raw_ts, start)
        hi = len(self.raw_ts) if end is None else bisect.bisect_left(self.raw_ts, end)
        merged.extend((self.raw_ts[j], rank0, self.raw_values[j]) for j in range(lo, hi))
        merged.sort(key=lambda p: (p[0], p[1]))
        return [
            (ts, v)
            for ts, _, v in merged
            if (start is None or ts >= start) and (end is None or ts < end)
        ]

    def __len__(self) -> int:
        return len(self.raw_ts) + sum(len(t) for t in self.tiers)


@dataclass
class WriteResult:
    key: SeriesKey
    overflowed: bool


class SeriesStore:
    def __init__(
        self,
        tiers: Iterable[ResolutionTier] = DEFAULT_TIERS,
        cardinality_limit: int = DEFAULT_CARDINALITY_LIMIT,
    ) -> None:
        self.tiers = check_tiers(tiers)
        if cardinality_limit < 1:
            raise ValueError("cardinality_limit must be positive")
        self.cardinality_limit = cardinality_limit
        self._series: dict[SeriesKey, Series] = {}
        self._known: dict[str, set[TagSet]] = {}
        self._overflow_last: dict[tuple[str, TagSet], float] = {}
        self._overflow_total: dict[SeriesKey, float] = {}
        self._lock = threading.RLock()

    # cardinality

    def limit_cardinality(self, name: str, tags: TagSet) -> SeriesKey:
        with self._lock:
            known = self._known.setdefault(name, set())
            if tags in known:
                return SeriesKey(name, tags)
            if len(known) < self.cardinality_limit:
                known.add(tags)
                return SeriesKey(name, tags)
            return SeriesKey(name, OVERFLOW_TAGS)

    # writes

    def write(self, sample: MetricSample) -> WriteResult:
        with self._lock:
            key = self.limit_cardinality(sample.name, sample.tags)
            overflowed = key.tags == OVERFLOW_TAGS and sample.tags != OVERFLOW_TAGS
            series = self._series.get(key)
            if series is None:
                series = self._series[key] = Series(key, sample.kind, len(self.tiers))
            value = sample.value
            if overflowed and series.kind is MetricKind.COUNTER:
                src = (sample.name, sample.tags)
                prev = self._overflow_last.get(src, 0.0)
                delta = value - prev if value >= prev else value
                self._overflow_last[src] = value
                value = self._overflow_total.get(key, 0.0) + delta
                self._overflow_total[key] = value
            series.append(sample.timestamp, value)
            return WriteResult(key, overflowed)

    # reads

    def names(self) -> list[str]:
        return sorted({k.name for k in self._series})

    def series(self, name: str | None = None) -> list[Series]:
        with self._lock:
            keys = sorted(k for k in self._series if name is None or k.name == name)
            return [self._series[k] for k in keys]

    def get(self, name: str, tags: TagSet) -> Series | None:
        return self._series.get(SeriesKey(name, tags))

    def tagset_count(self, name: str) -> int:
        return sum(1 for k in self._series if k.name == name)

    def __contains__(self, name: str) -> bool:
        return any(k.name == name for k in self._series)

    def __len__(self) -> int:
        return len(self._series)

    # downsampling

    def downsample(self, now_ms: int) -> list[int]:
        """Fold points that aged out of each tier into the next one.

        Returns, per tier, how many source points were folded into it; the
        last tier's expired buckets are evicted.
        """
        written = [0] * len(self.tiers)
        with self._lock:
            for series in self._series.values():
                self._downsample_series(series, now_ms, written)
        return written

    def _downsample_series(self, s: Series, now_ms: int, written: list[int]) -> None:
        if len(self.tiers) == 1:
            cutoff = now_ms - self.tiers[0].retention_s * 1000
            n = bisect.bisect_left(s.raw_ts, cutoff)
            del s.raw_ts[:n], s.raw_values[:n]
            return
        # raw -> tier 1
        cutoff = now_ms - self.tiers[0].retention_s * 1000
        n = bisect.bisect_left(s.raw_ts, cutoff)
        if n:
            step = self.tiers[1].step_s * 1000
            buckets = s.tiers[0]
            for ts, v in zip(s.raw_ts[:n], s.raw_values[:n]):
                b_ts = ts - ts % step
                b = buckets.get(b_ts)
                if b is None:
                    b = buckets[b_ts] = Bucket(b_ts)
                b.add(ts, v)
            written[1] += n
            del s.raw_ts[:n], s.raw_values[:n]
        # tier i -> tier i+1, evicting past the last tier
        for i in range(1, len(self.tiers)):
            cutoff = now_ms - self.tiers[i].retention_s * 1000
            src = s.tiers[i - 1]
            old = sorted(ts for ts in src if ts < cutoff)
            if not old:
                continue
            if i + 1 < len(self.tiers):
                step = self.tiers[i + 1].step_s * 1000
                dst = s.tiers[i]
                for ts in old:
                    b = src.pop(ts)
                    d_ts = ts - ts % step
                    d = dst.get(d_ts)
                    if d is None:
                        d = dst[d_ts] = Bucket(d_ts)
                    d.merge(b)
                written[i + 1] += len(old)
            else:
                for ts in old:
                    del src[ts]
