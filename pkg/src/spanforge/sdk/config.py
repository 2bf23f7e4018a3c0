from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from ..model import parse_float

# milliseconds; +inf is always appended as the last bucket
DEFAULT_HISTOGRAM_BOUNDS = (5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 2500.0, 5000.0)
DEFAULT_BUFFER_CAPACITY = 10_000


def normalize_bounds(bounds) -> tuple[float, ...]:
    """Sorted, deduplicated bucket bounds ending in +inf."""
    vals = sorted({float(b) for b in bounds})
    if any(math.isnan(b) for b in vals):
        raise ValueError("histogram bounds must not be NaN")
    if not vals or vals[-1] != math.inf:
        vals.append(math.inf)
    return tuple(vals)


@dataclass
class SdkConfig:
    """Per-service SDK settings.

    ``from_mapping`` reads the dotted keys used in config files
    (``service.name``, ``export.mode``, ``histogram.bounds`` ...).
    """

    service_name: str
    service_version: str = ""
    instance_id: str = ""
    node_label: str = ""
    export_mode: str = "push"
    buffer_capacity: int = DEFAULT_BUFFER_CAPACITY
    histogram_bounds: tuple[float, ...] = field(default=DEFAULT_HISTOGRAM_BOUNDS)

    def __post_init__(self) -> None:
        if not self.service_name:
            raise ValueError("service.name is required")
        if self.export_mode not in ("push", "pull"):
            raise ValueError(f"export.mode must be push or pull, not {self.export_mode!r}")
        if self.buffer_capacity < 1:
            raise ValueError("buffer.capacity must be positive")
        self.histogram_bounds = normalize_bounds(self.histogram_bounds)

    @classmethod
    def from_mapping(cls, m: Mapping[str, str]) -> SdkConfig:
        kw: dict = {"service_name": m.get("service.name", "")}
        for key, attr in (
            ("service.version", "service_version"),
            ("instance.id", "instance_id"),
            ("node.label", "node_label"),
            ("export.mode", "export_mode"),
        ):
            if key in m:
                kw[attr] = m[key]
        if "buffer.capacity" in m:
            kw["buffer_capacity"] = int(m["buffer.capacity"])
        if "histogram.bounds" in m:
            kw["histogram_bounds"] = tuple(parse_float(b.strip()) for b in m["histogram.bounds"].split(","))
        return cls(**kw)

    def resource_tags(self) -> dict[str, str]:
        tags = {
            "service.version": self.service_version,
            "instance.id": self.instance_id,
            "node.label": self.node_label,
        }
        return {k: v for k, v in tags.items() if v}
