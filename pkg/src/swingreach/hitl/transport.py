"""Blocking line transport over a stream socket."""

from __future__ import annotations

import socket
import time
from typing import Optional

from .protocol import MAX_LINE, Frame, ProtocolError, decode, encode

DEFAULT_TIMEOUT = 5.0


class TransportClosed(ConnectionError):
    pass


class TransportTimeout(TimeoutError):
    pass


class LineTransport:
    """Frames one text line at a time; every receive honours ``timeout`` seconds."""

    def __init__(self, sock: socket.socket, timeout: Optional[float] = DEFAULT_TIMEOUT):
        self.sock = sock
        self.sock.settimeout(timeout)
        self._reader = sock.makefile("rb")
        self.closed = False

    def send_line(self, line: bytes) -> None:
        try:
            self.sock.sendall(line)
        except OSError as exc:
            raise TransportClosed(f"send failed: {exc}") from exc

    def recv_line(self) -> bytes:
        try:
            line = self._reader.readline(MAX_LINE + 1)
        except socket.timeout:
            raise TransportTimeout("no frame within timeout") from None
        except OSError as exc:
            raise TransportClosed(f"receive failed: {exc}") from exc
        if not line:
            raise TransportClosed("peer closed the connection")
        if len(line) > MAX_LINE:
            raise ProtocolError(f"frame longer than {MAX_LINE} bytes")
        return line

    def send(self, frame: Frame) -> None:
        self.send_line(encode(frame))

    def recv(self) -> Frame:
        return decode(self.recv_line())

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self._reader.close()
        finally:
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def transport_pair(timeout: Optional[float] = DEFAULT_TIMEOUT) -> tuple[LineTransport, LineTransport]:
    """Two connected in-process endpoints."""
    a, b = socket.socketpair()
    return LineTransport(a, timeout), LineTransport(b, timeout)


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def connect(address: str, timeout: Optional[float] = DEFAULT_TIMEOUT,
            retry_for: float = 0.0) -> LineTransport:
    """Connect, retrying refused connections for up to ``retry_for`` seconds."""
    host_port = parse_address(address)
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection(host_port, timeout=timeout)
            return LineTransport(sock, timeout)
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)


def listen(address: str, timeout: Optional[float] = None) -> socket.socket:
    """Bound listening socket; pass it to :func:`accept`."""
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind(parse_address(address))
    srv.listen(1)
    srv.settimeout(timeout)
    return srv


def accept(server: socket.socket, timeout: Optional[float] = DEFAULT_TIMEOUT) -> LineTransport:
    try:
        conn, _ = server.accept()
    except socket.timeout:
        raise TransportTimeout("no peer connected within timeout") from None
    return LineTransport(conn, timeout)
