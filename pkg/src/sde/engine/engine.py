"""The always-running engine: registry, data path, request path and local merge.

Data (the blue path) enters through :meth:`Engine.ingest_many`, is routed by
the copy-on-write dataset index to every interested synopsis, and is queued in
the mailbox of each target shard. Requests (the red path) are executed on a
small thread pool and reach shards only through control messages, which the
workers serve ahead of data.

Shard placement: shard ``s`` of synopsis ``σ`` lives on worker
``(stable_hash(σ) + s) mod W``, so the shards of one synopsis spread over the
pool while many light synopses share it.
"""

from __future__ import annotations

import importlib
import itertools
import threading
from collections import OrderedDict
from concurrent.futures import Future, ThreadPoolExecutor, wait
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from ..core import (
    ParameterError,
    Partitioning,
    ProtocolError,
    RecordError,
    ScopeType,
    SDEError,
    StreamRecord,
    SynopsisSpec,
    WindowMode,
    shard_for_stream,
    stable_hash,
)
from ..protocol import (
    Request,
    Response,
    ResponseIds,
    StatusEntry,
    StatusReport,
    Verb,
    error_response,
    format_response,
    parse_request,
    request_id_of,
    status_of,
    unknown_field_count,
)
from ..synopses import AMSSketch, Synopsis, register_plugin, resolve, state_for_spec
from .topics import Topic, make_topics
from .windows import PanedState, check_paned_window
from .worker import GONE, Worker

DEFAULT_QUERY_TIMEOUT_S = 30.0


class Route(str, Enum):
    """Where an estimate goes once a shard has produced it."""

    OUTPUT = "output"        # answered by one local shard
    UNION_REMOTE = "union"   # another site is responsible: ship the state there
    LOCAL_MERGE = "merge"    # partials merged here (local shards or federated frames)


def splitter_route(spec: SynopsisSpec, site_id: str) -> Route:
    if spec.federation is not None:
        if spec.federation.responsible_site != site_id:
            return Route.UNION_REMOTE
        return Route.LOCAL_MERGE
    if spec.scope.type is ScopeType.WHOLE_SOURCE and spec.parallelism > 1:
        return Route.LOCAL_MERGE
    return Route.OUTPUT


def unknown_synopsis(synopsis_id: str) -> ProtocolError:
    return ProtocolError("unknown_synopsis", f"unknown synopsis {synopsis_id!r}", synopsisID=synopsis_id)


# ---------------------------------------------------------------------------
# Local merger


class _Slot:
    __slots__ = ("expected", "parts", "failure", "done")

    def __init__(self, expected: int, done: Callable[[Synopsis | None, BaseException | None], None]) -> None:
        self.expected = expected
        self.parts: dict[int, Synopsis] = {}
        self.failure: BaseException | None = None
        self.done = done


class Merger:
    """Collects the partial states of one merge key and merges them once all have arrived.

    Partials are merged in shard order, so the result does not depend on
    which worker finished first. A missing shard (its synopsis was stopped
    meanwhile) fails the whole merge: there are no partial answers.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._slots: dict[str, _Slot] = {}
        self.partials = 0
        self.merges = 0

    def open(self, key: str, expected: int,
             done: Callable[[Synopsis | None, BaseException | None], None]) -> None:
        with self._lock:
            if key in self._slots:
                raise ProtocolError("duplicate_request", f"merge key {key!r} is already open")
            self._slots[key] = _Slot(expected, done)

    def offer(self, key: str, index: int, partial: Any) -> None:
        with self._lock:
            slot = self._slots.get(key)
            if slot is None:
                return
            self.partials += 1
            if isinstance(partial, BaseException):
                slot.failure = slot.failure or partial
            elif partial is GONE:
                slot.failure = slot.failure or RuntimeError("gone")
            else:
                slot.parts[index] = partial
            if slot.failure is None and len(slot.parts) < slot.expected:
                return
            del self._slots[key]
        if slot.failure is not None:
            slot.done(None, slot.failure)
            return
        try:
            out = slot.parts[0]
            for i in range(1, slot.expected):
                out = out.merge(slot.parts[i])
        except BaseException as exc:
            slot.done(None, exc)
            return
        with self._lock:
            self.merges += 1
        slot.done(out, None)

    def pending(self) -> int:
        with self._lock:
            return len(self._slots)


# ---------------------------------------------------------------------------
# Synopses and their shards


@dataclass(frozen=True)
class Marker:
    """In-band window-close marker: snapshot the window ending at ``ref`` into merge ``key``."""

    ref: int
    key: str


class Shard:
    """One partition of a synopsis; touched only by its owning worker."""

    def __init__(self, entry: "Entry", index: int) -> None:
        self.entry = entry
        self.index = index
        self.state = None if entry.per_stream else entry.fresh_state()
        self.states: dict[str, Any] = {}
        self.accepted = 0
        self.rejected = 0
        self.too_old = 0

    def _state_for(self, stream: str) -> Any:
        st = self.states.get(stream)
        if st is None:
            st = self.states[stream] = self.entry.fresh_state()
        return st

    def apply(self, items: Sequence[tuple[StreamRecord, int]]) -> None:
        if not self.entry.per_stream:
            self._apply_to(self.state, items, None)
            return
        groups: dict[str, list] = {}
        for it in items:
            groups.setdefault(it[0].stream_id, []).append(it)
        for stream, group in groups.items():
            self._apply_to(self._state_for(stream), group, stream)

    def _apply_to(self, state: Any, items: Sequence[tuple[StreamRecord, int]], stream: str | None) -> None:
        e = self.entry
        kf, vf = e.spec.key_field, e.spec.value_fields
        if e.on_update:
            for rec, pos in items:
                try:
                    args = state.extract(rec, kf, vf)
                    if e.paned:
                        if state.add_args([(pos, args)]):
                            self.too_old += 1
                            continue
                    else:
                        state.add(*args)
                except RecordError:
                    self.rejected += 1
                    continue
                self.accepted += 1
                e.emit(self._view(state, None).estimate(e.spec.query), stream)
            return
        if e.paned:
            tagged = []
            for rec, pos in items:
                try:
                    tagged.append((pos, state.extract(rec, kf, vf)))
                except RecordError:
                    self.rejected += 1
            dropped = state.add_args(tagged)
            self.accepted += len(tagged) - dropped
            self.too_old += dropped
            return
        records = [rec for rec, _ in items]
        bad = state.add_records(records, kf, vf)
        self.rejected += len(bad)
        self.accepted += len(records) - len(bad)

    def apply_marker(self, marker: Marker) -> None:
        self.entry.engine.merger.offer(marker.key, self.index, self.snapshot(marker.ref))

    def _view(self, state: Any, ref: int | None) -> Synopsis:
        return state.snapshot(ref) if isinstance(state, PanedState) else state

    def snapshot(self, ref: int | None) -> Synopsis:
        """A private copy of the shard's state (the window ending at ``ref`` when windowed)."""
        if isinstance(self.state, PanedState):
            return self.state.snapshot(ref)
        return self.state.copy()

    def estimate(self, query: Any, stream: str | None, ref: int | None) -> Any:
        if self.entry.per_stream:
            st = self.states.get(stream)
            view = self.entry.template.empty_like() if st is None else self._view(st, ref)
        else:
            view = self._view(self.state, ref)
        return view.estimate(query)

    def estimate_all(self, query: Any, ref: int | None) -> dict[str, Any]:
        return {s: self._view(st, ref).estimate(query) for s, st in self.states.items()}

    def stream_snapshot(self, stream: str, ref: int | None) -> Synopsis | None:
        st = self.states.get(stream)
        if st is None:
            return None
        return st.snapshot(ref) if isinstance(st, PanedState) else st.copy()


class Entry:
    """A live synopsis: its spec, routing state and shards."""

    _uids = itertools.count()

    def __init__(self, spec: SynopsisSpec, template: Synopsis, engine: "Engine", request_id: str) -> None:
        self.spec = spec
        self.template = template
        self.engine = engine
        self.uid = next(self._uids)
        self.build_request_id = request_id
        scope = spec.scope.type
        self.per_stream = scope is ScopeType.PER_STREAM
        self.single = scope is ScopeType.SINGLE_STREAM
        self.n_shards = 1 if self.single else spec.parallelism
        self.paned = spec.window.windowed and not template.window_native
        self.time_window = spec.window.mode is WindowMode.TIME_SLIDING
        self.on_update = spec.continuous and scope is not ScopeType.WHOLE_SOURCE
        self.on_close = spec.continuous and scope is ScopeType.WHOLE_SOURCE
        self.round_robin = spec.partitioning is Partitioning.ROUND_ROBIN
        self.lock = threading.Lock()
        self.alive = True
        self.seq = 0
        self.watermark = -1
        self.late = 0
        self.filtered = 0
        self.rr = 0
        self.raw_bytes = 0
        self.windows_closed = 0
        self._stream_shard: dict[str, int] = {}
        self._emit_lock = threading.Lock()
        self.emitted = 0
        self.shards = [Shard(self, i) for i in range(self.n_shards)]
        base = stable_hash(spec.synopsis_id)
        self.workers = [engine.workers[(base + i) % len(engine.workers)] for i in range(self.n_shards)]
        self.keys = [(spec.synopsis_id, self.uid, i) for i in range(self.n_shards)]

    def fresh_state(self) -> Any:
        if self.paned:
            return PanedState(self.template.empty_like(), self.spec.window)
        return self.template.empty_like()

    def position(self) -> int | None:
        """Window position of the newest accepted tuple; None when unwindowed."""
        if not self.spec.window.windowed:
            return None
        return self.watermark if self.time_window else self.seq - 1

    def shard_of(self, stream_id: str) -> int:
        s = self._stream_shard.get(stream_id)
        if s is None:
            s = self._stream_shard[stream_id] = shard_for_stream(stream_id, self.n_shards)
        return s

    def emit(self, value: Any, stream: str | None) -> None:
        if stream is not None:
            value = {stream: value}
        with self._emit_lock:
            seq = self.emitted
            self.emitted += 1
            self.engine._publish_continuous(self, value, seq)

    def items_seen(self) -> int:
        return sum(sh.accepted for sh in self.shards)

    def take_raw_bytes(self) -> int:
        with self.lock:
            n, self.raw_bytes = self.raw_bytes, 0
        return n


# ---------------------------------------------------------------------------
# The engine


class Engine:
    def __init__(self, workers: int = 4, site_id: str = "site-0", mailbox_capacity: int = 8192,
                 request_threads: int = 4, topics: Mapping[str, Topic] | None = None,
                 query_timeout: float = DEFAULT_QUERY_TIMEOUT_S) -> None:
        if workers < 1:
            raise ParameterError("workers", "must be >= 1")
        self.site_id = site_id
        self.ids = ResponseIds(site_id)
        self.topics = dict(topics) if topics is not None else make_topics()
        self.workers = [Worker(i, mailbox_capacity) for i in range(workers)]
        for w in self.workers:
            w.start()
        self.executor = ThreadPoolExecutor(request_threads, thread_name_prefix="sde-request")
        self.merger = Merger()
        self.query_timeout = query_timeout
        self.federation: Any = None
        self._registry: dict[str, Entry] = OrderedDict()
        self._routes: dict[str, tuple[Entry, ...]] = {}
        self._reg_lock = threading.Lock()
        self._counter_lock = threading.Lock()
        self._query_ids = itertools.count()
        self.dropped = 0
        self.records_in = 0
        self.closed = False
        self._listeners: list[Callable[[Response], None]] = []

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        for w in self.workers:
            w.shutdown()
        for w in self.workers:
            w.join(timeout=5)
        self.executor.shutdown(wait=False, cancel_futures=True)

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def add_listener(self, fn: Callable[[Response], None]) -> None:
        """Call ``fn`` with every response this engine publishes."""
        self._listeners.append(fn)

    def _publish(self, resp: Response) -> None:
        self.topics["output"].publish(format_response(resp))
        for fn in self._listeners:
            fn(resp)

    def _publish_continuous(self, entry: Entry, value: Any, seq: int) -> None:
        spec = entry.spec
        self._publish(Response(self.ids.next(), entry.build_request_id, spec.synopsis_id, spec.params,
                               value, self.site_id, status_of(value), seq=seq))

    # -- registry -----------------------------------------------------------

    def entry(self, synopsis_id: str) -> Entry:
        e = self._registry.get(synopsis_id)
        if e is None:
            raise unknown_synopsis(synopsis_id)
        return e

    def synopsis_ids(self) -> list[str]:
        return list(self._registry)

    def build(self, spec: SynopsisSpec, request_id: str = "") -> StatusEntry:
        template = state_for_spec(spec)
        if spec.window.windowed and not template.window_native:
            check_paned_window(spec.window)
        if spec.federation is not None and spec.scope.type is ScopeType.PER_STREAM:
            raise ParameterError("federation", "per-stream synopses are not federated; use WholeSource")
        if spec.continuous:
            if spec.federation is not None:
                raise ParameterError("continuous", "continuous queries on federated synopses are not supported")
            if spec.scope.type is ScopeType.WHOLE_SOURCE and not spec.window.windowed:
                raise ParameterError("window", "a continuous WholeSource synopsis emits on window close; give it a window")
            try:
                template.estimate(spec.query)
            except ProtocolError as exc:
                if exc.code == "kind_mismatch":
                    raise
        with self._reg_lock:
            if spec.synopsis_id in self._registry:
                raise ProtocolError("duplicate_synopsis", f"synopsis {spec.synopsis_id!r} already exists",
                                    synopsisID=spec.synopsis_id)
            entry = Entry(spec, template, self, request_id)
            futures = [w.call(lambda w, k=k, sh=sh: w.shards.__setitem__(k, sh))
                       for w, k, sh in zip(entry.workers, entry.keys, entry.shards)]
            for f in futures:
                f.result()
            self._registry[spec.synopsis_id] = entry
            routes = dict(self._routes)
            routes[spec.dataset_id] = routes.get(spec.dataset_id, ()) + (entry,)
            self._routes = routes
        return self._status_entry(entry)

    def stop(self, synopsis_id: str) -> None:
        with self._reg_lock:
            entry = self._registry.pop(synopsis_id, None)
            if entry is None:
                raise unknown_synopsis(synopsis_id)
            routes = dict(self._routes)
            rest = tuple(e for e in routes.get(entry.spec.dataset_id, ()) if e is not entry)
            if rest:
                routes[entry.spec.dataset_id] = rest
            else:
                routes.pop(entry.spec.dataset_id, None)
            self._routes = routes
            entry.alive = False
            futures = [w.call(lambda w, k=k: _drop(w, k)) for w, k in zip(entry.workers, entry.keys)]
        for f in futures:
            f.result()

    def load(self, plugin: str, factory: str | None = None) -> None:
        """Activate a plugin kind; with ``factory`` ("module:attr") register it first."""
        if factory is None:
            resolve(plugin)
            return
        mod_name, _, attr = factory.partition(":")
        try:
            obj = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ProtocolError("unknown_factory", f"cannot load {factory!r}: {exc}", factory=factory) from None
        register_plugin(plugin, obj)

    # -- data path ----------------------------------------------------------

    def ingest(self, record: StreamRecord) -> None:
        self.ingest_many((record,))

    def ingest_many(self, records: Iterable[StreamRecord]) -> None:
        """Route records to every interested synopsis; blocks while target mailboxes are full."""
        routes = self._routes
        by_ds: dict[str, list[StreamRecord]] = {}
        n = 0
        for r in records:
            n += 1
            by_ds.setdefault(r.dataset_id, []).append(r)
        dropped = 0
        for ds, recs in by_ds.items():
            entries = routes.get(ds)
            if not entries:
                dropped += len(recs)
                continue
            for entry in entries:
                self._dispatch(entry, recs)
        with self._counter_lock:
            self.records_in += n
            self.dropped += dropped

    def _dispatch(self, entry: Entry, records: Sequence[StreamRecord]) -> None:
        spec = entry.spec
        win = spec.window
        segments: dict[int, list] = {}

        def push(shard: int, item: Any) -> None:
            segs = segments.setdefault(shard, [])
            if isinstance(item, Marker):
                segs.append(item)
            elif segs and isinstance(segs[-1], list):
                segs[-1].append(item)
            else:
                segs.append([item])

        with entry.lock:
            if not entry.alive:
                return
            for r in records:
                if entry.single and r.stream_id != spec.scope.stream_id:
                    entry.filtered += 1
                    continue
                if entry.time_window:
                    prev = entry.watermark
                    if r.event_time < prev - win.allowed_lateness:
                        entry.late += 1
                        continue
                    pos = r.event_time
                    if pos > prev:
                        if entry.on_close and prev >= 0 and pos // win.slide > prev // win.slide:
                            self._close_window(entry, prev, push)
                        entry.watermark = pos
                else:
                    pos = entry.seq
                    if entry.on_close and pos > 0 and pos % win.slide == 0:
                        self._close_window(entry, pos - 1, push)
                entry.seq += 1
                if entry.round_robin:
                    shard = entry.rr % entry.n_shards
                    entry.rr += 1
                else:
                    shard = entry.shard_of(r.stream_id)
                if spec.federation is not None:
                    entry.raw_bytes += len(r.to_line()) + 1
                push(shard, (r, pos))
            for shard, segs in segments.items():
                worker, key = entry.workers[shard], entry.keys[shard]
                for seg in segs:
                    if not worker.enqueue(key, seg):
                        return

    def _close_window(self, entry: Entry, ref: int, push: Callable[[int, Any], None]) -> None:
        key = f"{entry.spec.synopsis_id}#{entry.uid}#w{entry.windows_closed}"
        entry.windows_closed += 1

        def done(state: Synopsis | None, err: BaseException | None) -> None:
            if state is not None:
                entry.emit(state.estimate(entry.spec.query), None)

        self.merger.open(key, entry.n_shards, done)
        marker = Marker(ref, key)
        for s in range(entry.n_shards):
            push(s, marker)

    def flush(self, timeout: float | None = None) -> None:
        """Wait until every record queued so far has been applied."""
        futures = [w.barrier() for w in self.workers]
        done, not_done = wait(futures, timeout=timeout)
        if not_done:
            raise TimeoutError("flush timed out")

    # -- query path ---------------------------------------------------------

    def _wait(self, fut: Future) -> Any:
        return fut.result(timeout=self.query_timeout)

    def _ask(self, entry: Entry, shard: int, fn: Callable[[Shard], Any]) -> Any:
        out = self._wait(entry.workers[shard].query(entry.keys[shard], fn))
        if out is GONE:
            raise unknown_synopsis(entry.spec.synopsis_id)
        return out

    def local_state(self, entry: Entry, merge_key: str | None = None) -> Synopsis:
        """Merged snapshot of all local shards (WholeSource / SingleStream scopes)."""
        if entry.per_stream:
            raise ProtocolError("kind_mismatch", "a per-stream synopsis has no single merged state")
        ref = entry.position()
        key = merge_key or f"q{next(self._query_ids)}"
        result: Future = Future()

        def done(state: Synopsis | None, err: BaseException | None) -> None:
            if err is not None:
                result.set_exception(err)
            else:
                result.set_result(state)

        self.merger.open(key, entry.n_shards, done)
        for i, (w, k) in enumerate(zip(entry.workers, entry.keys)):
            fut = w.query(k, lambda sh: sh.snapshot(ref))
            fut.add_done_callback(lambda f, i=i: self.merger.offer(
                key, i, f.exception() if f.exception() is not None else f.result()))
        try:
            return self._wait(result)
        except RuntimeError as exc:
            if str(exc) == "gone":
                raise unknown_synopsis(entry.spec.synopsis_id) from None
            raise

    def stream_states(self, entry: Entry) -> dict[str, Synopsis]:
        """Snapshots of every per-stream state of a PerStreamOfSource synopsis."""
        ref = entry.position()
        out: dict[str, Synopsis] = {}
        for i in range(entry.n_shards):
            part = self._ask(entry, i, lambda sh: {s: sh.stream_snapshot(s, ref) for s in sh.states})
            out.update(part)
        return dict(sorted(out.items()))

    def _resolve_query(self, entry: Entry, query: Mapping[str, Any] | None) -> Any:
        if query is None or not isinstance(query, Mapping):
            return query
        q = dict(query)
        other = q.get("other")
        if isinstance(other, str) and entry.template.kind == AMSSketch.kind:
            q["other"] = self.local_state(self.entry(other))
        return q

    def estimate(self, synopsis_id: str, query: Mapping[str, Any] | None = None,
                 request_id: str | None = None) -> Any:
        """Answer an ad-hoc query from this site's shards."""
        entry = self.entry(synopsis_id)
        q = self._resolve_query(entry, query)
        ref = entry.position()
        if entry.per_stream:
            q = dict(q or {})
            stream = q.pop("streamID", None)
            q = q or None
            if stream is not None:
                if not isinstance(stream, str):
                    raise ProtocolError("schema_error", "streamID must be a string", field="query.streamID")
                return self._ask(entry, entry.shard_of(stream), lambda sh: sh.estimate(q, stream, ref))
            out: dict[str, Any] = {}
            for i in range(entry.n_shards):
                out.update(self._ask(entry, i, lambda sh: sh.estimate_all(q, ref)))
            return dict(sorted(out.items()))
        if entry.n_shards == 1:
            return self._ask(entry, 0, lambda sh: sh.estimate(q, None, ref))
        return self.local_state(entry, request_id and f"r:{request_id}:{next(self._query_ids)}").estimate(q)

    def query(self, synopsis_id: str, query: Mapping[str, Any] | None = None,
              request_id: str = "") -> Response:
        return self.handle(Request(request_id or f"adhoc-{next(self._query_ids)}", Verb.ADHOC_QUERY,
                                   synopsis_id, query=query))

    # -- status -------------------------------------------------------------

    def _status_entry(self, entry: Entry) -> StatusEntry:
        spec = entry.spec
        shards = sum(len(sh.states) for sh in entry.shards) if entry.per_stream else entry.n_shards
        return StatusEntry(spec.synopsis_id, str(spec.kind), spec.params, spec.scope.type.value,
                           entry.n_shards, spec.continuous, spec.federation is not None,
                           entry.items_seen(), shards, spec.scope.stream_id)

    def status(self) -> StatusReport:
        """Snapshot of the live registry, read without messaging the workers."""
        entries = list(self._registry.values())
        counters = {
            "synopses": len(entries),
            "workers": len(self.workers),
            "recordsIn": self.records_in,
            "dropped": self.dropped,
            "late": sum(e.late for e in entries),
            "rejected": sum(sh.rejected for e in entries for sh in e.shards),
            "tooOld": sum(sh.too_old for e in entries for sh in e.shards),
            "queued": sum(w.queued() for w in self.workers),
            "discarded": sum(w.discarded for w in self.workers),
            "unknownFields": unknown_field_count(),
            "mergesPending": self.merger.pending(),
        }
        return StatusReport(tuple(self._status_entry(e) for e in entries), counters)

    # -- request handling ---------------------------------------------------

    def execute(self, req: Request, rid: str | None = None) -> Response:
        """Run one request; errors propagate as :class:`SDEError`."""
        rid = rid or self.ids.next()
        if req.verb is Verb.BUILD:
            entry = self.build(req.spec, req.request_id)
            return Response(rid, req.request_id, req.spec.synopsis_id, req.spec.params,
                            StatusReport((entry,)), self.site_id)
        if req.verb is Verb.STOP:
            params = self.entry(req.synopsis_id).spec.params
            self.stop(req.synopsis_id)
            return Response(rid, req.request_id, req.synopsis_id, params, None, self.site_id)
        if req.verb is Verb.LOAD:
            self.load(req.plugin, req.factory)
            return Response(rid, req.request_id, None, None, req.plugin, self.site_id)
        if req.verb is Verb.STATUS:
            report = self.status()
            if req.synopsis_id is not None:
                found = report.find(req.synopsis_id)
                if found is None:
                    raise unknown_synopsis(req.synopsis_id)
                report = StatusReport((found,), report.counters)
            return Response(rid, req.request_id, req.synopsis_id, None, report, self.site_id)
        entry = self.entry(req.synopsis_id)
        if entry.spec.federation is not None:
            if self.federation is not None:
                return self.federation.federated_query(self, entry, req, rid)
            if entry.spec.federation.responsible_site != self.site_id:
                raise ProtocolError("unreachable_site", "no federation is attached to this engine",
                                    site=entry.spec.federation.responsible_site)
        value = self.estimate(req.synopsis_id, req.query, req.request_id)
        return Response(rid, req.request_id, req.synopsis_id, entry.spec.params, value, self.site_id,
                        status_of(value))

    def handle(self, req: Request, publish: bool = True) -> Response:
        """Execute a request and turn any failure into a structured error response."""
        rid = self.ids.next()
        try:
            resp = self.execute(req, rid)
        except SDEError as exc:
            resp = error_response(req.request_id, exc, rid, self.site_id, req.synopsis_id)
        except TimeoutError:
            resp = error_response(req.request_id, ProtocolError("timeout", "the query timed out"),
                                  rid, self.site_id, req.synopsis_id)
        except Exception as exc:  # never let a request take the engine down
            resp = error_response(req.request_id, ProtocolError("internal_error", f"{type(exc).__name__}: {exc}"),
                                  rid, self.site_id, req.synopsis_id)
        if publish:
            self._publish(resp)
        return resp

    def handle_line(self, line: str | bytes, publish: bool = True) -> Response:
        try:
            req = parse_request(line)
        except SDEError as exc:
            resp = error_response(request_id_of(line), exc, self.ids.next(), self.site_id)
            if publish:
                self._publish(resp)
            return resp
        return self.handle(req, publish)

    def submit(self, req: Request | str) -> Future:
        """Run a request (or request line) on the request pool; the future yields the Response."""
        if isinstance(req, Request):
            return self.executor.submit(self.handle, req)
        return self.executor.submit(self.handle_line, req)


def _drop(worker: Worker, key: Any) -> None:
    with worker.cond:
        worker.shards.pop(key, None)
        box = worker.boxes.pop(key, None)
        worker.pending.pop(key, None)
        if box is not None:
            worker.discarded += sum(len(x) if isinstance(x, list) else 1 for x in box)
            try:
                worker.ready.remove(key)
            except ValueError:
                pass
        worker.cond.notify_all()
