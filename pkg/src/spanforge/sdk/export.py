"""Bounded export buffer and the sinks it drains into.

The buffer never blocks a producer: when full, the new line is discarded and
counted. A flusher drains batches in FIFO order; a failed batch is re-queued
once at the head and dropped (counted) if the retry fails too.
"""

from __future__ import annotations

import logging
import socket
import threading
from collections import deque
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .config import DEFAULT_BUFFER_CAPACITY

log = logging.getLogger(__name__)


class SinkUnavailable(ConnectionError):
    """The sink could not take a batch; retriable."""


class Sink(Protocol):
    def send(self, lines: Sequence[str]) -> None: ...


class ExportBuffer:
    def __init__(self, capacity: int = DEFAULT_BUFFER_CAPACITY) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.drop_counter = 0
        # entries are [line, attempts]
        self._q: deque[list] = deque()
        self._lock = threading.Lock()

    def offer(self, line: str) -> bool:
        with self._lock:
            if len(self._q) >= self.capacity:
                self.drop_counter += 1
                return False
            self._q.append([line, 0])
            return True

    def __len__(self) -> int:
        return len(self._q)

    def lines(self) -> list[str]:
        with self._lock:
            return [e[0] for e in self._q]

    def _take(self, n: int) -> list[list]:
        with self._lock:
            return [self._q.popleft() for _ in range(min(n, len(self._q)))]

    def _requeue(self, entries: list[list]) -> None:
        with self._lock:
            retry = [e for e in entries if e[1] == 0]
            self.drop_counter += len(entries) - len(retry)
            # the head may now exceed capacity by the retried batch; trim from the tail
            for e in reversed(retry):
                e[1] = 1
                self._q.appendleft(e)
            while len(self._q) > self.capacity:
                self._q.pop()
                self.drop_counter += 1


def flush_push(buffer: ExportBuffer, sink: Sink, batch_size: int = 500) -> int:
    """Send up to ``batch_size`` queued lines; returns how many were sent."""
    entries = buffer._take(batch_size)
    if not entries:
        return 0
    try:
        sink.send([e[0] for e in entries])
    except (SinkUnavailable, OSError) as e:
        log.debug("export sink unavailable: %s", e)
        buffer._requeue(entries)
        return 0
    return len(entries)


def drain(buffer: ExportBuffer, sink: Sink, batch_size: int = 500) -> int:
    """Flush until the buffer is empty or the sink fails."""
    total = 0
    while len(buffer):
        sent = flush_push(buffer, sink, batch_size)
        if not sent:
            break
        total += sent
    return total


class ListSink:
    """In-memory sink; collects lines in order."""

    def __init__(self) -> None:
        self.lines: list[str] = []

    def send(self, lines: Sequence[str]) -> None:
        self.lines.extend(lines)


class CallbackSink:
    def __init__(self, fn: Callable[[Sequence[str]], None]) -> None:
        self.fn = fn

    def send(self, lines: Sequence[str]) -> None:
        self.fn(lines)


class RoutingSink:
    """Routes each line by its record keyword (``SPAN``, ``LOG``, ``METRIC``)."""

    def __init__(self, routes: Mapping[str, Sink]) -> None:
        self.routes = dict(routes)

    def send(self, lines: Sequence[str]) -> None:
        batches: dict[str, list[str]] = {}
        for line in lines:
            batches.setdefault(line.split(" ", 1)[0], []).append(line)
        for kind, batch in batches.items():
            sink = self.routes.get(kind)
            if sink is not None:
                sink.send(batch)


class SocketSink:
    """Writes lines to a line-protocol listener over TCP, reconnecting lazily."""

    def __init__(self, host: str, port: int, timeout: float = 2.0) -> None:
        self.address = (host, port)
        self.timeout = timeout
        self._sock: socket.socket | None = None

    def send(self, lines: Iterable[str]) -> None:
        payload = "".join(line + "\n" for line in lines).encode()
        try:
            if self._sock is None:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            self._sock.sendall(payload)
        except OSError as e:
            self.close()
            raise SinkUnavailable(f"{self.address[0]}:{self.address[1]}: {e}") from e

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


class Flusher(threading.Thread):
    """Single consumer that drains a buffer into a sink every ``interval_s``."""

    def __init__(self, buffer: ExportBuffer, sink: Sink, interval_s: float = 1.0, batch_size: int = 500) -> None:
        super().__init__(daemon=True, name="spanforge-flusher")
        self.buffer = buffer
        self.sink = sink
        self.interval_s = interval_s
        self.batch_size = batch_size
        self._stop = threading.Event()

    def run(self) -> None:
        while not self._stop.wait(self.interval_s):
            drain(self.buffer, self.sink, self.batch_size)
        drain(self.buffer, self.sink, self.batch_size)

    def stop(self) -> None:
        self._stop.set()
        self.join()
