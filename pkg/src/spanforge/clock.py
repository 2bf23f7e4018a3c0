"""Time sources. Every clock is a zero-argument callable returning integer
microseconds since the Unix epoch."""

from __future__ import annotations

import time
from typing import Callable

Clock = Callable[[], int]


def system_clock() -> int:
    return time.time_ns() // 1000


class VirtualClock:
    """Manually advanced clock for simulation and tests."""

    def __init__(self, start_us: int = 0) -> None:
        self.now = start_us

    def __call__(self) -> int:
        return self.now

    def set(self, t_us: int) -> None:
        self.now = t_us

    def advance(self, delta_us: int) -> int:
        self.now += delta_us
        return self.now


class OffsetClock:
    """A clock that disagrees with ``base`` by a fixed offset, like a host
    with a badly synchronised wall clock."""

    def __init__(self, base: Clock, offset_us: int) -> None:
        self.base = base
        self.offset_us = offset_us

    def __call__(self) -> int:
        return self.base() + self.offset_us
