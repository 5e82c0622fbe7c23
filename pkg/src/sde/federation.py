"""Multi-site operation: union channels, responsible-site merging, byte accounting.

A federated synopsis is built with the same spec on every site. An ad-hoc
query is run by the spec's responsible site: it asks every peer for its local
state over the union channel, merges the frames it receives with its own
state and answers on its output channel. A site that receives a query it is
not responsible for forwards it and relays the answer.

Union envelopes are NDJSON lines. A state frame looks like::

    {"type":"frame","origin":"site-1","mergeKey":"q-17","synopsisID":"hll",
     "kind":"HyperLogLog","form":"state","bytes":143,"payload_b64":"U0RF..."}

``form`` is ``state`` for whole mergeable states and ``digest`` for the
time-series kinds, which ship only their per-stream coefficients or
signatures.
"""

from __future__ import annotations

import base64
import heapq
import itertools
import json
import socket
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .core import ParameterError, ProtocolError, SDEError
from .engine.engine import Engine, Entry
from .engine.topics import Subscription
from .protocol import Request, Response, Verb, format_response, parse_response, status_of
from .synopses import Synopsis, from_bytes

FRAME = "frame"
COLLECT = "collect"
FORWARD = "forward"
RESULT = "result"


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class SiteConfig:
    """This site's id, its union listener address and the peers it federates with."""

    site_id: str
    peers: Mapping[str, str] = field(default_factory=dict)
    union_address: str | None = None

    def __post_init__(self) -> None:
        if not self.site_id:
            raise ParameterError("site_id", "must be non-empty")
        peers = {k: v for k, v in self.peers.items() if k != self.site_id}
        object.__setattr__(self, "peers", peers)

    @property
    def sites(self) -> list[str]:
        return sorted([self.site_id, *self.peers])

    def address_of(self, site_id: str) -> str:
        try:
            return self.peers[site_id]
        except KeyError:
            raise ProtocolError("unreachable_site", f"site {site_id!r} is not a known peer", site=site_id) from None

    @classmethod
    def parse_peers(cls, text: str) -> dict[str, str]:
        """Parse ``site_id address`` lines; blank lines and ``#`` comments are skipped."""
        peers: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParameterError("peers", f"line {n}: expected 'site_id address', got {raw!r}")
            if parts[0] in peers:
                raise ParameterError("peers", f"line {n}: duplicate site id {parts[0]!r}")
            peers[parts[0]] = parts[1]
        return peers

    @classmethod
    def from_file(cls, path: str | Path, site_id: str) -> "SiteConfig":
        peers = cls.parse_peers(Path(path).read_text(encoding="utf-8"))
        return cls(site_id, peers, peers.get(site_id))


# ---------------------------------------------------------------------------
# Wire envelopes


@dataclass(frozen=True)
class UnionFrame:
    """A serialized state (or digest) shipped to the site that merges it."""

    origin: str
    merge_key: str
    synopsis_id: str
    kind: str
    form: str
    payload: bytes

    @property
    def bytes(self) -> int:
        return len(self.payload)

    def to_dict(self) -> dict[str, Any]:
        return {"type": FRAME, "origin": self.origin, "mergeKey": self.merge_key,
                "synopsisID": self.synopsis_id, "kind": self.kind, "form": self.form,
                "bytes": self.bytes, "payload_b64": base64.b64encode(self.payload).decode("ascii")}

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "UnionFrame":
        try:
            payload = base64.b64decode(d["payload_b64"], validate=True)
            frame = cls(d["origin"], d["mergeKey"], d["synopsisID"], d["kind"], d.get("form", "state"), payload)
        except (KeyError, ValueError, TypeError) as exc:
            raise ProtocolError("frame_error", f"malformed union frame: {exc}") from None
        if d.get("bytes") != frame.bytes:
            raise ProtocolError("frame_error", "union frame length does not match its payload")
        return frame

    def state(self) -> Synopsis:
        return from_bytes(self.payload)


def _envelope(kind: str, **fields: Any) -> str:
    return json.dumps({"type": kind, **fields}, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Communication ledger


@dataclass
class LinkStats:
    bytes: int = 0
    frames: int = 0
    raw_bytes: int = 0


class CommLedger:
    """Bytes shipped per (synopsis, origin, destination), next to the raw-tuple counterfactual."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._links: dict[tuple[str, str, str], LinkStats] = {}

    def record(self, synopsis_id: str, origin: str, dest: str, frame_bytes: int, raw_bytes: int) -> None:
        if frame_bytes < 0 or raw_bytes < 0:
            raise ValueError("byte counts are non-negative")
        with self._lock:
            st = self._links.setdefault((synopsis_id, origin, dest), LinkStats())
            st.bytes += frame_bytes
            st.frames += 1
            st.raw_bytes += raw_bytes

    def links(self) -> dict[tuple[str, str, str], LinkStats]:
        with self._lock:
            return {k: LinkStats(v.bytes, v.frames, v.raw_bytes) for k, v in self._links.items()}

    def totals(self, synopsis_id: str | None = None) -> LinkStats:
        out = LinkStats()
        for (sid, _, _), st in self.links().items():
            if synopsis_id is None or sid == synopsis_id:
                out.bytes += st.bytes
                out.frames += st.frames
                out.raw_bytes += st.raw_bytes
        return out

    def frames_to(self, dest: str) -> int:
        return sum(st.frames for (_, _, d), st in self.links().items() if d == dest)


# ---------------------------------------------------------------------------
# Transports


class Transport:
    def send(self, origin: str, dest: str, line: str) -> int:
        """Deliver one envelope line to ``dest``'s union channel; returns bytes written."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class InMemoryNetwork(Transport):
    """Union channels of engines living in one process."""

    def __init__(self) -> None:
        self.engines: dict[str, Engine] = {}

    def attach(self, engine: Engine) -> None:
        self.engines[engine.site_id] = engine

    def send(self, origin: str, dest: str, line: str) -> int:
        target = self.engines.get(dest)
        if target is None or target.closed:
            raise ProtocolError("unreachable_site", f"site {dest!r} is not reachable", site=dest)
        target.topics["union"].publish(line)
        return len(line.encode("utf-8")) + 1


class TcpTransport(Transport):
    """Writes envelopes to the peers' union listeners, one persistent connection per peer."""

    def __init__(self, config: SiteConfig, retries: int = 3, backoff_s: float = 0.2) -> None:
        self.config = config
        self.retries = retries
        self.backoff_s = backoff_s
        self._socks: dict[str, socket.socket] = {}
        self._lock = threading.Lock()

    def _connect(self, dest: str) -> socket.socket:
        host, _, port = self.config.address_of(dest).rpartition(":")
        return socket.create_connection((host or "127.0.0.1", int(port)), timeout=5)

    def send(self, origin: str, dest: str, line: str) -> int:
        data = (line + "\n").encode("utf-8")
        delay = self.backoff_s
        for attempt in range(self.retries + 1):
            try:
                with self._lock:
                    sock = self._socks.get(dest)
                    if sock is None:
                        sock = self._socks[dest] = self._connect(dest)
                    sock.sendall(data)
                return len(data)
            except OSError:
                with self._lock:
                    bad = self._socks.pop(dest, None)
                if bad is not None:
                    bad.close()
                if attempt == self.retries:
                    break
                time.sleep(delay)
                delay *= 2
        raise ProtocolError("unreachable_site", f"site {dest!r} did not accept the union frame", site=dest)

    def close(self) -> None:
        with self._lock:
            for s in self._socks.values():
                s.close()
            self._socks.clear()


# ---------------------------------------------------------------------------
# Federation of one site


class _Round:
    def __init__(self, expected: set[str]) -> None:
        self.expected = expected
        self.frames: dict[str, Synopsis] = {}
        self.failure: SDEError | None = None
        self.event = threading.Event()


def ship_state(entry: Entry, state: Synopsis) -> tuple[str, Synopsis]:
    """The form a site ships for a synopsis: a digest for per-stream series kinds."""
    digest = getattr(state, "digest", None)
    if entry.template.per_stream and callable(digest):
        return "digest", digest()
    return "state", state


class Federation:
    """Attaches union-channel federation to one engine."""

    def __init__(self, engine: Engine, config: SiteConfig, transport: Transport,
                 ledger: CommLedger | None = None, timeout: float = 10.0) -> None:
        if config.site_id != engine.site_id:
            raise ParameterError("site_id", "the engine and the site config disagree on the site id")
        self.engine = engine
        self.config = config
        self.transport = transport
        self.ledger = ledger if ledger is not None else CommLedger()
        self.timeout = timeout
        self._rounds: dict[str, _Round] = {}
        self._pending_results: dict[str, Future] = {}
        self._lock = threading.Lock()
        self._keys = itertools.count()
        self.frames_received = 0
        engine.federation = self
        self._sub: Subscription = engine.topics["union"].subscribe()
        self._thread = threading.Thread(target=self._consume, name=f"sde-union-{config.site_id}", daemon=True)
        self._thread.start()

    @property
    def site_id(self) -> str:
        return self.config.site_id

    def close(self) -> None:
        self._sub.close()
        self._thread.join(timeout=5)
        self.transport.close()

    # -- sending ------------------------------------------------------------

    def _send(self, dest: str, line: str) -> int:
        return self.transport.send(self.site_id, dest, line)

    def _ship(self, entry: Entry, dest: str, merge_key: str) -> UnionFrame:
        form, state = ship_state(entry, self.engine.local_state(entry))
        frame = UnionFrame(self.site_id, merge_key, entry.spec.synopsis_id, state.kind, form, state.to_bytes())
        raw = entry.take_raw_bytes()
        written = self._send(dest, frame.to_line())
        self.ledger.record(entry.spec.synopsis_id, self.site_id, dest, written, raw)
        return frame

    # -- receiving ----------------------------------------------------------

    def _consume(self) -> None:
        for line in self._sub:
            try:
                d = json.loads(line)
                kind = d.get("type", FRAME)
                if kind == FRAME:
                    self._on_frame(UnionFrame.from_dict(d))
                elif kind == COLLECT:
                    self.engine.executor.submit(self._on_collect, d)
                elif kind == FORWARD:
                    self.engine.executor.submit(self._on_forward, d)
                elif kind == RESULT:
                    self._on_result(d)
            except (ValueError, SDEError):
                continue

    def _on_frame(self, frame: UnionFrame) -> None:
        with self._lock:
            rnd = self._rounds.get(frame.merge_key)
            if rnd is None or frame.origin not in rnd.expected or frame.origin in rnd.frames:
                return
            self.frames_received += 1
        try:
            state = frame.state()
        except SDEError as exc:
            rnd.failure = exc
            rnd.event.set()
            return
        with self._lock:
            rnd.frames[frame.origin] = state
            if len(rnd.frames) == len(rnd.expected):
                rnd.event.set()

    def _on_collect(self, d: Mapping[str, Any]) -> None:
        origin, key, sid = d["origin"], d["mergeKey"], d["synopsisID"]
        try:
            entry = self.engine.entry(sid)
            self._ship(entry, origin, key)
        except SDEError as exc:
            self._send(origin, _envelope(RESULT, origin=self.site_id, mergeKey=key, failure=exc.to_dict()))

    def _on_forward(self, d: Mapping[str, Any]) -> None:
        req = Request(d["requestId"], Verb.ADHOC_QUERY, d["synopsisID"], query=d.get("query"))
        resp = self.engine.handle(req)
        self._send(d["origin"], _envelope(RESULT, origin=self.site_id, mergeKey=d["mergeKey"],
                                          response=format_response(resp)))

    def _on_result(self, d: Mapping[str, Any]) -> None:
        key = d.get("mergeKey")
        if "failure" in d:
            with self._lock:
                rnd = self._rounds.get(key)
            if rnd is not None:
                f = d["failure"]
                rnd.failure = ProtocolError(f.get("code", "error"), f"site {d.get('origin')}: {f.get('message')}")
                rnd.event.set()
            return
        with self._lock:
            fut = self._pending_results.pop(key, None)
        if fut is not None:
            fut.set_result(parse_response(d["response"]))

    # -- queries ------------------------------------------------------------

    def collect(self, entry: Entry, merge_key: str | None = None) -> Synopsis:
        """Merge one frame per participating site into the federated state (responsible site only)."""
        spec = entry.spec
        if spec.federation is None or spec.federation.responsible_site != self.site_id:
            raise ProtocolError("not_responsible", f"{self.site_id} is not responsible for {spec.synopsis_id!r}")
        key = merge_key or f"{self.site_id}:{next(self._keys)}"
        peers = [s for s in self.config.sites if s != self.site_id]
        rnd = _Round(set(peers))
        with self._lock:
            if key in self._rounds:
                raise ProtocolError("duplicate_request", f"merge key {key!r} is already in use")
            self._rounds[key] = rnd
        try:
            if not peers:
                rnd.event.set()
            for p in peers:
                try:
                    self._send(p, _envelope(COLLECT, origin=self.site_id, mergeKey=key, synopsisID=spec.synopsis_id))
                except SDEError:
                    pass  # reported as absent below
            form, own = ship_state(entry, self.engine.local_state(entry))
            entry.take_raw_bytes()
            rnd.event.wait(self.timeout)
        finally:
            with self._lock:
                self._rounds.pop(key, None)
        if rnd.failure is not None:
            raise rnd.failure
        absent = sorted(rnd.expected - set(rnd.frames))
        if absent:
            raise ProtocolError("partial_federation", f"no frame from {', '.join(absent)}", absent=absent)
        frames = dict(rnd.frames)
        frames[self.site_id] = own
        out = frames[self.config.sites[0]]
        for site in self.config.sites[1:]:
            out = out.merge(frames[site])
        return out

    def federated_query(self, engine: Engine, entry: Entry, req: Request, response_id: str) -> Response:
        spec = entry.spec
        responsible = spec.federation.responsible_site
        if responsible != self.site_id:
            key = f"{self.site_id}:fwd:{next(self._keys)}"
            fut: Future = Future()
            with self._lock:
                self._pending_results[key] = fut
            try:
                self._send(responsible, _envelope(FORWARD, origin=self.site_id, mergeKey=key,
                                                  requestId=req.request_id, synopsisID=spec.synopsis_id,
                                                  query=req.query))
                return fut.result(timeout=self.timeout)
            except TimeoutError:
                raise ProtocolError("partial_federation", f"no answer from responsible site {responsible}",
                                    absent=[responsible]) from None
            finally:
                with self._lock:
                    self._pending_results.pop(key, None)
        state = self.collect(entry, f"{self.site_id}:{req.request_id}:{next(self._keys)}")
        value = state.estimate(engine._resolve_query(entry, req.query))
        return Response(response_id, req.request_id, spec.synopsis_id, spec.params, value, self.site_id,
                        status_of(value))


# ---------------------------------------------------------------------------
# Periodic rounds


class SimClock:
    """A manually advanced clock with timers, so periodic rounds run without waiting."""

    def __init__(self, start: float = 0.0) -> None:
        self.now = start
        self._timers: list[tuple[float, int, Callable[[], None]]] = []
        self._ids = itertools.count()

    def call_at(self, when: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._timers, (when, next(self._ids), fn))

    def advance(self, dt: float) -> None:
        end = self.now + dt
        while self._timers and self._timers[0][0] <= end:
            when, _, fn = heapq.heappop(self._timers)
            self.now = when
            fn()
        self.now = end


class PeriodicScheduler:
    """Runs a federated query every ``period`` clock units; overlapping rounds are skipped."""

    def __init__(self, federation: Federation, synopsis_id: str, period: float, clock: SimClock,
                 query: Mapping[str, Any] | None = None, background: bool = False) -> None:
        if period <= 0:
            raise ParameterError("period", "must be positive")
        entry = federation.engine.entry(synopsis_id)
        if entry.spec.federation is None:
            raise ParameterError("synopsisID", f"{synopsis_id!r} is not federated")
        self.federation = federation
        self.synopsis_id = synopsis_id
        self.period = period
        self.clock = clock
        self.query = query
        self.background = background
        self.rounds = 0
        self.skipped = 0
        self.results: list[Response] = []
        self._busy = threading.Lock()
        self._active = True
        clock.call_at(clock.now + period, self._fire)

    def cancel(self) -> None:
        self._active = False

    def _fire(self) -> None:
        if not self._active:
            return
        self.clock.call_at(self.clock.now + self.period, self._fire)
        if not self._busy.acquire(blocking=False):
            self.skipped += 1
            return
        if self.background:
            self.federation.engine.executor.submit(self._round)
        else:
            self._round()

    def _round(self) -> None:
        try:
            n = self.rounds
            self.rounds += 1
            req = Request(f"{self.synopsis_id}@round{n}", Verb.ADHOC_QUERY, self.synopsis_id, query=self.query)
            self.results.append(self.federation.engine.handle(req))
        finally:
            self._busy.release()


def schedule_periodic_federation(federation: Federation, synopsis_id: str, period: float,
                                 clock: SimClock, query: Mapping[str, Any] | None = None) -> PeriodicScheduler:
    return PeriodicScheduler(federation, synopsis_id, period, clock, query)


# ---------------------------------------------------------------------------
# In-process multi-site harness


class FederationHarness:
    """N engines in one process joined by an in-memory union network."""

    def __init__(self, n_sites: int, workers: int = 1, timeout: float = 10.0, prefix: str = "site-") -> None:
        if n_sites < 1:
            raise ParameterError("n_sites", "must be >= 1")
        self.network = InMemoryNetwork()
        self.ledger = CommLedger()
        self.site_ids = [f"{prefix}{i}" for i in range(n_sites)]
        self.engines: dict[str, Engine] = {}
        self.federations: dict[str, Federation] = {}
        for sid in self.site_ids:
            eng = Engine(workers=workers, site_id=sid)
            self.network.attach(eng)
            self.engines[sid] = eng
        for sid in self.site_ids:
            cfg = SiteConfig(sid, {p: f"mem:{p}" for p in self.site_ids})
            self.federations[sid] = Federation(self.engines[sid], cfg, self.network, self.ledger, timeout)

    def build(self, spec) -> None:
        for eng in self.engines.values():
            eng.build(spec)

    def query(self, site_id: str, synopsis_id: str, query: Mapping[str, Any] | None = None,
              request_id: str | None = None) -> Response:
        eng = self.engines[site_id]
        rid = request_id or f"fq-{next(eng._query_ids)}"
        return eng.handle(Request(rid, Verb.ADHOC_QUERY, synopsis_id, query=query))

    def flush(self) -> None:
        for eng in self.engines.values():
            eng.flush()

    def close(self) -> None:
        for f in self.federations.values():
            f.close()
        for eng in self.engines.values():
            eng.close()

    def __enter__(self) -> "FederationHarness":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()
