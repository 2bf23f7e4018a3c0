"""Small TCP helpers for the line protocols: a threaded line server and a
request/response client."""

from __future__ import annotations

import socket
import socketserver
import threading
from typing import Callable, Iterable, Iterator

END = "END"

# handler(first_line, rest_of_stream) -> response lines or None
Handler = Callable[[str, Iterator[str]], "Iterable[str] | None"]


def parse_address(text: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = default_host, text
    return host or default_host, int(port)


class LineServer:
    """Threaded TCP server that hands each connection's lines to ``handler``.

    The handler receives the first line and an iterator over the remaining
    ones; returned lines are written back followed by ``END``.
    """

    def __init__(self, handler: Handler, address: tuple[str, int] = ("127.0.0.1", 0)) -> None:
        outer = self

        class _Conn(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                lines = (raw.decode("utf-8", "replace").rstrip("\n") for raw in self.rfile)
                first = next(lines, None)
                if first is None:
                    return
                reply = outer.handler(first, lines)
                if reply is not None:
                    out = "".join(line + "\n" for line in reply) + END + "\n"
                    self.wfile.write(out.encode())

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.handler = handler
        self._server = _Server(address, _Conn)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    def start(self) -> LineServer:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> LineServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def request(address: tuple[str, int], lines: Iterable[str], timeout: float = 5.0) -> list[str]:
    """Send ``lines``, half-close, and read the reply up to ``END``."""
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.sendall("".join(line + "\n" for line in lines).encode())
        sock.shutdown(socket.SHUT_WR)
        chunks = []
        while True:
            data = sock.recv(65536)
            if not data:
                break
            chunks.append(data)
    body = b"".join(chunks).decode()
    out = body.split("\n")
    if END not in out:
        raise ConnectionError(f"truncated reply from {address[0]}:{address[1]}")
    return out[: out.index(END)]
