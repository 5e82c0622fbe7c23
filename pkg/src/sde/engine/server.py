"""TCP and file adapters for the four channels.

Every channel is newline-delimited JSON:

* data: clients write records; the listener batches lines into ``ingest_many``
* request: clients write requests; each gets its response back on the same
  connection (in order) and also on the output channel
* output: clients only read; every response and continuous emission is streamed
* union: peers write union envelopes (see :mod:`sde.federation`)
"""

from __future__ import annotations

import socket
import socketserver
import threading
from pathlib import Path
from typing import IO, Iterable, Iterator

from ..core import RecordError, StreamRecord
from ..protocol import format_response
from .engine import Engine

DATA_BATCH = 1024


def parse_address(addr: str) -> tuple[str, int]:
    """``host:port`` or ``:port`` (all interfaces are not used: empty host means localhost)."""
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise ValueError(f"address {addr!r} must look like host:port")
    return host or "127.0.0.1", int(port)


def format_address(addr: tuple[str, int]) -> str:
    return f"{addr[0]}:{addr[1]}"


def iter_records(lines: Iterable[str | bytes], errors: list[str] | None = None) -> Iterator[StreamRecord]:
    for line in lines:
        if not line.strip():
            continue
        try:
            yield StreamRecord.from_line(line)
        except RecordError as exc:
            if errors is not None:
                errors.append(str(exc))


def ingest_lines(engine: Engine, lines: Iterable[str | bytes], batch: int = DATA_BATCH) -> tuple[int, int]:
    """Feed record lines to the engine in batches; returns (accepted, malformed)."""
    errors: list[str] = []
    buf: list[StreamRecord] = []
    n = 0
    for rec in iter_records(lines, errors):
        buf.append(rec)
        if len(buf) >= batch:
            engine.ingest_many(buf)
            n += len(buf)
            buf = []
    if buf:
        engine.ingest_many(buf)
        n += len(buf)
    return n, len(errors)


def replay_requests(engine: Engine, lines: Iterable[str | bytes]) -> Iterator[str]:
    """Run request lines in order and yield each formatted response."""
    for line in lines:
        if isinstance(line, bytes):
            line = line.decode("utf-8", "replace")
        if not line.strip():
            continue
        yield format_response(engine.handle_line(line))


def replay_file(engine: Engine, path: str | Path, channel: str) -> Iterator[str]:
    with open(path, "r", encoding="utf-8") as fh:
        if channel == "data":
            n, bad = ingest_lines(engine, fh)
            engine.flush()
            yield f'{{"records":{n},"malformed":{bad}}}'
        elif channel == "request":
            yield from replay_requests(engine, fh)
        elif channel == "union":
            for line in fh:
                if line.strip():
                    engine.topics["union"].publish(line.rstrip("\n"))
        else:
            raise ValueError(f"cannot replay into channel {channel!r}")


class _Server(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, handler, engine: Engine) -> None:
        self.engine = engine
        super().__init__(addr, handler)


class _DataHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        ingest_lines(self.server.engine, self.rfile)


class _RequestHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for line in self.rfile:
            if not line.strip():
                continue
            resp = self.server.engine.handle_line(line)
            try:
                self.wfile.write((format_response(resp) + "\n").encode("utf-8"))
                self.wfile.flush()
            except OSError:
                return


class _OutputHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        sub = self.server.engine.topics["output"].subscribe()
        try:
            for line in sub:
                self.wfile.write((line + "\n").encode("utf-8"))
                self.wfile.flush()
        except OSError:
            pass
        finally:
            sub.close()


class _UnionHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        topic = self.server.engine.topics["union"]
        for line in self.rfile:
            text = line.decode("utf-8", "replace").strip()
            if text:
                topic.publish(text)


_HANDLERS = {"data": _DataHandler, "request": _RequestHandler, "output": _OutputHandler, "union": _UnionHandler}


class EngineServer:
    """Exposes an engine's channels on TCP listeners; the channel set is fixed at start."""

    def __init__(self, engine: Engine, **addresses: str | None) -> None:
        unknown = set(addresses) - set(_HANDLERS)
        if unknown:
            raise ValueError(f"unknown channels {sorted(unknown)}")
        self.engine = engine
        self._servers: dict[str, _Server] = {}
        self._threads: list[threading.Thread] = []
        for name, addr in addresses.items():
            if addr:
                self._servers[name] = _Server(parse_address(addr), _HANDLERS[name], engine)

    @property
    def addresses(self) -> dict[str, str]:
        return {name: format_address(s.server_address[:2]) for name, s in self._servers.items()}

    def start(self) -> "EngineServer":
        for name, srv in self._servers.items():
            t = threading.Thread(target=srv.serve_forever, name=f"sde-{name}-listener", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        for srv in self._servers.values():
            srv.shutdown()
            srv.server_close()
        self.engine.topics["output"].close()

    def __enter__(self) -> "EngineServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def send_lines(address: str, lines: Iterable[str], read_replies: bool = True,
               timeout: float = 60.0) -> list[str]:
    """Client helper: write lines to a channel; with ``read_replies`` read one reply per line."""
    out: list[str] = []
    with socket.create_connection(parse_address(address), timeout=timeout) as sock:
        reader: IO[bytes] = sock.makefile("rb")
        for line in lines:
            line = line.strip()
            if not line:
                continue
            sock.sendall((line + "\n").encode("utf-8"))
            if read_replies:
                reply = reader.readline()
                if not reply:
                    break
                out.append(reply.decode("utf-8").rstrip("\n"))
        if not read_replies:
            sock.shutdown(socket.SHUT_WR)
            reader.read()
    return out
