"""Request/response messages: newline-delimited JSON, one message per line.

Every message carries ``"v": 1``. Requests name a ``verb`` (Build, Stop, Load,
AdHocQuery, Status); responses echo the request id, the synopsis id and its
parameters, and carry the estimate as a tagged value. Field names and the
value encoding are documented with examples in ``docs/protocol.md``.

Parsing is strict about what it needs and lenient about the rest: unknown
fields are ignored and counted, never fatal. Every failure is a
:class:`~sde.core.SDEError` that :func:`error_response` turns into a
structured reply.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .core import (
    Degenerate,
    FederationSpec,
    ParameterError,
    Partitioning,
    ProtocolError,
    Scope,
    ScopeType,
    SDEError,
    SynopsisSpec,
    WindowMode,
    WindowSpec,
    parse_kind,
)
from .synopses.values import DFTEstimate, ItemCount, RHPEstimate, WeightedPoints

VERSION = 1


class Verb(str, enum.Enum):
    BUILD = "Build"
    STOP = "Stop"
    LOAD = "Load"
    ADHOC_QUERY = "AdHocQuery"
    STATUS = "Status"


_KNOWN_FIELDS = {
    "v", "request_id", "verb", "synopsisID", "kind", "datasetKey", "scope", "keyIndex",
    "valueIndexes", "param", "parallelism", "partitioning", "window", "continuous",
    "federation", "query", "plugin", "factory",
}

_warn_lock = threading.Lock()
_unknown_seen = 0


def unknown_field_count() -> int:
    """Unknown request fields ignored since start-up."""
    return _unknown_seen


def _note_unknown(n: int) -> None:
    global _unknown_seen
    with _warn_lock:
        _unknown_seen += n


# ---------------------------------------------------------------------------
# Messages


@dataclass(frozen=True)
class Request:
    request_id: str
    verb: Verb
    synopsis_id: str | None = None
    spec: SynopsisSpec | None = None
    query: Any = None
    plugin: str | None = None
    factory: str | None = None
    ignored: tuple[str, ...] = field(default=(), compare=False)

    @property
    def responsible_site(self) -> str | None:
        if self.spec is not None and self.spec.federation is not None:
            return self.spec.federation.responsible_site
        return None


@dataclass(frozen=True)
class StatusEntry:
    synopsis_id: str
    kind: str
    params: Mapping[str, Any]
    scope: str
    parallelism: int
    continuous: bool
    federated: bool
    items_seen: int
    shards: int
    stream: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {
            "synopsisID": self.synopsis_id, "kind": self.kind, "param": dict(self.params),
            "scope": self.scope, "parallelism": self.parallelism, "continuous": self.continuous,
            "federated": self.federated, "itemsSeen": self.items_seen, "shards": self.shards,
        }
        if self.stream is not None:
            d["stream"] = self.stream
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StatusEntry":
        return cls(d["synopsisID"], d["kind"], d["param"], d["scope"], d["parallelism"], d["continuous"],
                   d["federated"], d["itemsSeen"], d["shards"], d.get("stream"))


@dataclass(frozen=True)
class StatusReport:
    entries: tuple[StatusEntry, ...] = ()
    counters: Mapping[str, int] = field(default_factory=dict)

    def find(self, synopsis_id: str) -> StatusEntry | None:
        for e in self.entries:
            if e.synopsis_id == synopsis_id:
                return e
        return None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StatusReport):
            return NotImplemented
        return self.entries == other.entries and dict(self.counters) == dict(other.counters)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Response:
    response_id: str
    request_id: str
    synopsis_id: str | None = None
    params: Mapping[str, Any] | None = None
    value: Any = None
    site_id: str = ""
    status: str = "ok"
    error: Mapping[str, Any] | None = None
    seq: int | None = None

    @property
    def ok(self) -> bool:
        return self.status != "error"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Response):
            return NotImplemented
        return (self.response_id, self.request_id, self.synopsis_id, self.site_id, self.status, self.seq) == (
            other.response_id, other.request_id, other.synopsis_id, other.site_id, other.status, other.seq
        ) and _plain(self.params) == _plain(other.params) and _plain(self.error) == _plain(other.error) and \
            _values_equal(self.value, other.value)

    __hash__ = None  # type: ignore[assignment]


def _plain(x: Any) -> Any:
    return None if x is None else json.loads(json.dumps(x))


def _values_equal(a: Any, b: Any) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_values_equal(a[k], b[k]) for k in a)
    return a == b


# ---------------------------------------------------------------------------
# Parsing


def _require(d: Mapping[str, Any], name: str, types: type | tuple[type, ...], what: str) -> Any:
    if name not in d or d[name] is None:
        raise ProtocolError("schema_error", f"missing {name}", field=name)
    val = d[name]
    if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ProtocolError("schema_error", f"{name} must be {what}", field=name)
    if not isinstance(val, types):
        raise ProtocolError("schema_error", f"{name} must be {what}", field=name)
    return val


def _int_field(d: Mapping[str, Any], name: str, default: int) -> int:
    if name not in d or d[name] is None:
        return default
    v = d[name]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ProtocolError("schema_error", f"{name} must be an integer", field=name)
    return v


def _parse_scope(raw: Any) -> Scope:
    if raw is None:
        return Scope.whole_source()
    if isinstance(raw, str):
        raw = {"type": raw}
    if not isinstance(raw, Mapping) or "type" not in raw:
        raise ProtocolError("schema_error", "scope must be a string or an object with a type", field="scope")
    try:
        st = ScopeType(raw["type"])
    except ValueError:
        raise ProtocolError("schema_error", f"unknown scope {raw['type']!r}", field="scope") from None
    stream = raw.get("stream")
    if stream is not None and not isinstance(stream, str):
        raise ProtocolError("schema_error", "scope.stream must be a string", field="scope.stream")
    return Scope(st, stream)


def _parse_window(raw: Any) -> WindowSpec:
    if raw is None:
        return WindowSpec()
    if not isinstance(raw, Mapping):
        raise ProtocolError("schema_error", "window must be an object", field="window")
    try:
        mode = WindowMode(raw.get("mode", "None"))
    except ValueError:
        raise ParameterError("window.mode", f"unknown window mode {raw.get('mode')!r}") from None
    return WindowSpec(
        mode,
        _int_field(raw, "length", 0),
        _int_field(raw, "slide", 0),
        _int_field(raw, "allowedLateness", 0),
    )


def _parse_spec(d: Mapping[str, Any]) -> SynopsisSpec:
    synopsis_id = _require(d, "synopsisID", str, "a string")
    kind = _require(d, "kind", str, "a string")
    dataset = _require(d, "datasetKey", str, "a string")
    params = d.get("param", {})
    if not isinstance(params, Mapping):
        raise ProtocolError("schema_error", "param must be an object", field="param")
    values = d.get("valueIndexes", [])
    if not isinstance(values, list):
        raise ProtocolError("schema_error", "valueIndexes must be a list", field="valueIndexes")
    try:
        partitioning = Partitioning(d.get("partitioning", "KeyHash"))
    except ValueError:
        raise ParameterError("partitioning", f"unknown scheme {d.get('partitioning')!r}") from None
    continuous = d.get("continuous", False)
    if not isinstance(continuous, bool):
        raise ProtocolError("schema_error", "continuous must be a boolean", field="continuous")
    fed = d.get("federation")
    federation = None
    if fed is not None:
        if not isinstance(fed, Mapping):
            raise ProtocolError("schema_error", "federation must be an object", field="federation")
        site = fed.get("responsibleSite")
        if not isinstance(site, str) or not site:
            raise ParameterError("federation.responsibleSite", "federated specs need a responsible site")
        federation = FederationSpec(site, fed.get("siteId"))
    query = d.get("query")
    if query is not None and not isinstance(query, Mapping):
        raise ProtocolError("schema_error", "query must be an object", field="query")
    return SynopsisSpec(
        synopsis_id=synopsis_id,
        kind=parse_kind(kind),
        dataset_id=dataset,
        scope=_parse_scope(d.get("scope")),
        key_field=_int_field(d, "keyIndex", 0),
        value_fields=tuple(values),
        params=dict(params),
        parallelism=_int_field(d, "parallelism", 1),
        partitioning=partitioning,
        window=_parse_window(d.get("window")),
        continuous=continuous,
        federation=federation,
        query=dict(query) if query is not None else None,
    )


def request_from_dict(d: Any) -> Request:
    if not isinstance(d, Mapping):
        raise ProtocolError("schema_error", "request must be a JSON object")
    if "verb" not in d:
        raise ProtocolError("schema_error", "missing verb", field="verb")
    try:
        verb = Verb(d["verb"])
    except ValueError:
        raise ProtocolError("schema_error", f"unknown verb {d['verb']!r}", field="verb") from None
    v = d.get("v", VERSION)
    if v != VERSION:
        raise ProtocolError("unsupported_version", f"protocol version {v!r} is not supported", field="v")
    request_id = _require(d, "request_id", str, "a string")
    ignored = tuple(sorted(k for k in d if k not in _KNOWN_FIELDS))
    if ignored:
        _note_unknown(len(ignored))
    if verb is Verb.BUILD:
        spec = _parse_spec(d)
        return Request(request_id, verb, spec.synopsis_id, spec=spec, ignored=ignored)
    if verb in (Verb.STOP, Verb.ADHOC_QUERY):
        sid = _require(d, "synopsisID", str, "a string")
        query = d.get("query")
        if query is not None and not isinstance(query, Mapping):
            raise ProtocolError("schema_error", "query must be an object", field="query")
        return Request(request_id, verb, sid, query=dict(query) if query is not None else None, ignored=ignored)
    if verb is Verb.LOAD:
        plugin = _require(d, "plugin", str, "a string")
        factory = d.get("factory")
        if factory is not None and (not isinstance(factory, str) or ":" not in factory):
            raise ProtocolError("schema_error", "factory must look like 'module:attribute'", field="factory")
        return Request(request_id, verb, plugin=plugin, factory=factory, ignored=ignored)
    return Request(request_id, verb, d.get("synopsisID"), ignored=ignored)


def parse_request(line: str | bytes) -> Request:
    """Parse one NDJSON request line; raises :class:`SDEError` subclasses on failure."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("parse_error", "request is not valid UTF-8", offset=exc.start) from None
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("parse_error", f"malformed JSON: {exc.msg}",
                            offset=len(line[: exc.pos].encode("utf-8"))) from None
    return request_from_dict(d)


def request_id_of(line: str | bytes) -> str:
    """Best-effort request id of a possibly malformed line, for error replies."""
    try:
        d = json.loads(line)
        rid = d.get("request_id") if isinstance(d, dict) else None
        return rid if isinstance(rid, str) else ""
    except (ValueError, TypeError):
        return ""


# ---------------------------------------------------------------------------
# Formatting


def _dumps(d: Mapping[str, Any]) -> str:
    return json.dumps(d, separators=(",", ":"), allow_nan=False, ensure_ascii=False)


def spec_to_dict(spec: SynopsisSpec) -> dict[str, Any]:
    scope: dict[str, Any] = {"type": spec.scope.type.value}
    if spec.scope.stream_id is not None:
        scope["stream"] = spec.scope.stream_id
    d: dict[str, Any] = {
        "synopsisID": spec.synopsis_id,
        "kind": str(spec.kind),
        "datasetKey": spec.dataset_id,
        "scope": scope,
        "keyIndex": spec.key_field,
        "valueIndexes": list(spec.value_fields),
        "param": dict(spec.params),
        "parallelism": spec.parallelism,
        "partitioning": spec.partitioning.value,
        "continuous": spec.continuous,
    }
    if spec.window.windowed:
        d["window"] = {"mode": spec.window.mode.value, "length": spec.window.length,
                       "slide": spec.window.slide, "allowedLateness": spec.window.allowed_lateness}
    if spec.federation is not None:
        fed = {"responsibleSite": spec.federation.responsible_site}
        if spec.federation.site_id:
            fed["siteId"] = spec.federation.site_id
        d["federation"] = fed
    if spec.query is not None:
        d["query"] = dict(spec.query)
    return d


def request_to_dict(r: Request) -> dict[str, Any]:
    d: dict[str, Any] = {"v": VERSION, "request_id": r.request_id, "verb": r.verb.value}
    if r.verb is Verb.BUILD and r.spec is not None:
        d.update(spec_to_dict(r.spec))
    elif r.verb is Verb.LOAD:
        d["plugin"] = r.plugin
        if r.factory:
            d["factory"] = r.factory
    else:
        if r.synopsis_id is not None:
            d["synopsisID"] = r.synopsis_id
        if r.query is not None:
            d["query"] = r.query
    return d


def format_request(r: Request) -> str:
    return _dumps(request_to_dict(r))


def _finite(x: float) -> Any:
    return x if math.isfinite(x) else None


def encode_value(value: Any) -> dict[str, Any]:
    """Tagged JSON form of an estimate value. Non-finite numbers become ``degenerate``."""
    if isinstance(value, Degenerate):
        return {"type": "degenerate", "reason": value.reason}
    if value is None:
        return {"type": "null"}
    if isinstance(value, (bool, np.bool_)):
        return {"type": "boolean", "value": bool(value)}
    if isinstance(value, (int, np.integer)):
        return {"type": "number", "value": int(value)}
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(float(value)):
            return {"type": "degenerate", "reason": "non-finite"}
        return {"type": "number", "value": float(value)}
    if isinstance(value, str):
        return {"type": "string", "value": value}
    if isinstance(value, DFTEstimate):
        return {"type": "dft", "stream": _jsonable(value.stream),
                "coefficients": [[z.real, z.imag] for z in value.coefficients], "bucket": list(value.bucket)}
    if isinstance(value, RHPEstimate):
        return {"type": "rhp", "stream": _jsonable(value.stream), "bits": len(value.signature),
                "signature": value.hex(), "bucket": value.bucket}
    if isinstance(value, WeightedPoints):
        return {"type": "points", "points": value.points.tolist(), "weights": value.weights.tolist()}
    if isinstance(value, StatusReport):
        return {"type": "status", "synopses": [e.to_dict() for e in value.entries], "counters": dict(value.counters)}
    if isinstance(value, np.ndarray) and np.iscomplexobj(value):
        return {"type": "coefficients", "value": [[float(z.real), float(z.imag)] for z in value]}
    if isinstance(value, (list, tuple)) and value and all(isinstance(v, ItemCount) for v in value):
        return {"type": "items", "value": [[_jsonable(v.item), v.count] for v in value]}
    if isinstance(value, Mapping):
        return {"type": "map", "entries": [[_jsonable(k), encode_value(v)] for k, v in value.items()]}
    if isinstance(value, (list, tuple, np.ndarray)):
        return {"type": "list", "value": [_jsonable(v) for v in value]}
    raise ProtocolError("encoding_error", f"cannot encode {type(value).__name__}")


def _jsonable(x: Any) -> Any:
    if isinstance(x, (tuple, list, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return _finite(float(x))
    return x


def _tuple_key(x: Any) -> Any:
    return tuple(_tuple_key(v) for v in x) if isinstance(x, list) else x


def decode_value(d: Mapping[str, Any]) -> Any:
    t = d.get("type")
    if t == "degenerate":
        return Degenerate(d["reason"])
    if t == "null":
        return None
    if t in ("boolean", "number", "string"):
        return d["value"]
    if t == "dft":
        return DFTEstimate(_tuple_key(d["stream"]), tuple(complex(re, im) for re, im in d["coefficients"]),
                           tuple(d["bucket"]))
    if t == "rhp":
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(d["signature"]), dtype=np.uint8))[: d["bits"]]
        return RHPEstimate(_tuple_key(d["stream"]), tuple(int(b) for b in bits), d["bucket"])
    if t == "points":
        pts = np.asarray(d["points"], dtype=np.float64)
        ws = np.asarray(d["weights"], dtype=np.float64)
        return WeightedPoints(pts.reshape(len(ws), -1) if len(ws) else pts.reshape(0, 0), ws)
    if t == "status":
        return StatusReport(tuple(StatusEntry.from_dict(e) for e in d["synopses"]), dict(d.get("counters", {})))
    if t == "coefficients":
        return np.array([complex(re, im) for re, im in d["value"]], dtype=np.complex128)
    if t == "items":
        return [ItemCount(_tuple_key(k), c) for k, c in d["value"]]
    if t == "map":
        return {_tuple_key(k): decode_value(v) for k, v in d["entries"]}
    if t == "list":
        return list(d["value"])
    raise ProtocolError("schema_error", f"unknown value type {t!r}", field="value.type")


def response_to_dict(r: Response) -> dict[str, Any]:
    d: dict[str, Any] = {"v": VERSION, "response_id": r.response_id, "request_id": r.request_id}
    if r.synopsis_id is not None:
        d["synopsisID"] = r.synopsis_id
    if r.params is not None:
        d["param"] = dict(r.params)
    d["status"] = r.status
    if r.status != "error":
        d["value"] = encode_value(r.value)
    if r.error is not None:
        d["error"] = dict(r.error)
    d["siteId"] = r.site_id
    if r.seq is not None:
        d["seq"] = r.seq
    return d


def format_response(r: Response) -> str:
    """One JSON line with a fixed field order; never contains NaN or infinities."""
    return _dumps(response_to_dict(r))


def parse_response(line: str | bytes) -> Response:
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("parse_error", f"malformed JSON: {exc.msg}", offset=exc.pos) from None
    value = decode_value(d["value"]) if "value" in d else None
    return Response(
        response_id=d["response_id"], request_id=d["request_id"], synopsis_id=d.get("synopsisID"),
        params=d.get("param"), value=value, site_id=d.get("siteId", ""), status=d.get("status", "ok"),
        error=d.get("error"), seq=d.get("seq"),
    )


def status_of(value: Any) -> str:
    return "degenerate" if isinstance(value, Degenerate) else "ok"


class ResponseIds:
    """Unique response ids of one site: ``<site>-<counter>``."""

    def __init__(self, site_id: str) -> None:
        self.site_id = site_id
        self._counter = itertools.count(1)
        self._lock = threading.Lock()

    def next(self) -> str:
        with self._lock:
            return f"{self.site_id}-{next(self._counter)}"


def error_response(request_id: str, exc: SDEError, response_id: str, site_id: str = "",
                   synopsis_id: str | None = None) -> Response:
    return Response(response_id, request_id, synopsis_id, None, None, site_id, "error", exc.to_dict())


__all__ = [
    "VERSION",
    "Verb",
    "Request",
    "Response",
    "StatusEntry",
    "StatusReport",
    "parse_request",
    "request_from_dict",
    "request_id_of",
    "format_request",
    "request_to_dict",
    "spec_to_dict",
    "format_response",
    "parse_response",
    "response_to_dict",
    "encode_value",
    "decode_value",
    "error_response",
    "status_of",
    "ResponseIds",
    "unknown_field_count",
]
