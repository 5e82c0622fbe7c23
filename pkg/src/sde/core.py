"""Shared domain types, identifiers and the partition-key scheme.

Everything in here is an immutable value type. Records, specs and keys are
created once (usually by the protocol parser) and then shared freely between
the request path, the data path and the worker threads.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence, Union

import xxhash

__all__ = [
    "SDEError",
    "ParameterError",
    "ProtocolError",
    "RecordError",
    "MergeError",
    "RegistrationError",
    "StreamRecord",
    "SynopsisKind",
    "PluginKind",
    "Kind",
    "parse_kind",
    "ScopeType",
    "Scope",
    "WindowMode",
    "WindowSpec",
    "Partitioning",
    "FederationSpec",
    "SynopsisSpec",
    "PartitionKey",
    "Degenerate",
    "stable_hash",
    "item_bytes",
    "item_key",
    "make_partition_keys",
    "shard_for_stream",
]


# ---------------------------------------------------------------------------
# Errors


class SDEError(Exception):
    """Base class for every error the engine reports back to a requester."""

    code = "error"

    def __init__(self, message: str, **detail: Any) -> None:
        super().__init__(message)
        self.message = message
        self.detail = {k: v for k, v in detail.items() if v is not None}

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, **self.detail}


class ParameterError(SDEError, ValueError):
    code = "parameter_error"

    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}", field=field_name)
        self.field = field_name


class ProtocolError(SDEError):
    """Malformed or unanswerable request. ``code`` is set per instance."""

    def __init__(self, code: str, message: str, **detail: Any) -> None:
        super().__init__(message, **detail)
        self.code = code


class RecordError(SDEError, ValueError):
    code = "record_error"


class MergeError(SDEError):
    code = "merge_error"


class RegistrationError(SDEError):
    code = "registration_error"


# ---------------------------------------------------------------------------
# Records


Scalar = Union[int, float, str]


@dataclass(frozen=True, slots=True)
class StreamRecord:
    """One timestamped tuple of stream ``stream_id`` within data source ``dataset_id``."""

    dataset_id: str
    stream_id: str
    event_time: int
    values: tuple

    def __post_init__(self) -> None:
        if not self.dataset_id:
            raise RecordError("dataset_id must be non-empty")
        if not self.stream_id:
            raise RecordError("stream_id must be non-empty")
        if not isinstance(self.event_time, int) or self.event_time < 0:
            raise RecordError(f"event_time must be a non-negative integer, got {self.event_time!r}")
        if not isinstance(self.values, tuple):
            object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise RecordError("values must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset_id,
            "stream": self.stream_id,
            "ts": self.event_time,
            "values": list(self.values),
        }

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StreamRecord":
        try:
            return cls(str(d["dataset"]), str(d["stream"]), int(d["ts"]), tuple(d["values"]))
        except KeyError as exc:
            raise RecordError(f"record is missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise RecordError(f"malformed record: {exc}") from None

    @classmethod
    def from_line(cls, line: str | bytes) -> "StreamRecord":
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"malformed record JSON at offset {exc.pos}") from None
        if not isinstance(d, dict):
            raise RecordError("record must be a JSON object")
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# Synopsis kinds, scopes, windows


class SynopsisKind(str, enum.Enum):
    COUNT_MIN = "CountMin"
    BLOOM_FILTER = "BloomFilter"
    FM_SKETCH = "FMSketch"
    HYPERLOGLOG = "HyperLogLog"
    AMS_SKETCH = "AMSSketch"
    DFT = "DFT"
    RHP = "RHP"
    LOSSY_COUNTING = "LossyCounting"
    STICKY_SAMPLING = "StickySampling"
    CHAIN_SAMPLER = "ChainSampler"
    GK_QUANTILES = "GKQuantiles"
    CORESET_TREE = "CoreSetTree"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PluginKind:
    name: str

    def __str__(self) -> str:
        return self.name

    @property
    def value(self) -> str:
        return self.name


Kind = Union[SynopsisKind, PluginKind]


def parse_kind(name: str | Kind) -> Kind:
    if isinstance(name, (SynopsisKind, PluginKind)):
        return name
    try:
        return SynopsisKind(name)
    except ValueError:
        return PluginKind(str(name))


class ScopeType(str, enum.Enum):
    SINGLE_STREAM = "SingleStream"
    PER_STREAM = "PerStreamOfSource"
    WHOLE_SOURCE = "WholeSource"


@dataclass(frozen=True)
class Scope:
    type: ScopeType
    stream_id: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.type, ScopeType):
            try:
                object.__setattr__(self, "type", ScopeType(self.type))
            except ValueError:
                raise ProtocolError("schema_error", f"unknown scope {self.type!r}", field="scope") from None
        if self.type is ScopeType.SINGLE_STREAM and not self.stream_id:
            raise ParameterError("scope.stream", "SingleStream scope needs a stream id")

    @classmethod
    def single(cls, stream_id: str) -> "Scope":
        return cls(ScopeType.SINGLE_STREAM, stream_id)

    @classmethod
    def per_stream(cls) -> "Scope":
        return cls(ScopeType.PER_STREAM)

    @classmethod
    def whole_source(cls) -> "Scope":
        return cls(ScopeType.WHOLE_SOURCE)


class WindowMode(str, enum.Enum):
    NONE = "None"
    TIME_SLIDING = "TimeSliding"
    COUNT_SLIDING = "CountSliding"


@dataclass(frozen=True)
class WindowSpec:
    mode: WindowMode = WindowMode.NONE
    length: int = 0
    slide: int = 0
    allowed_lateness: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.mode, WindowMode):
            try:
                object.__setattr__(self, "mode", WindowMode(self.mode))
            except ValueError:
                raise ParameterError("window.mode", f"unknown window mode {self.mode!r}") from None
        if self.allowed_lateness < 0:
            raise ParameterError("window.allowedLateness", "must be non-negative")
        if self.mode is WindowMode.NONE:
            return
        if self.length <= 0:
            raise ParameterError("window.length", "must be a positive integer")
        slide = self.slide or self.length
        if slide <= 0 or slide > self.length:
            raise ParameterError("window.slide", "must satisfy 0 < slide <= length")
        object.__setattr__(self, "slide", slide)

    @property
    def windowed(self) -> bool:
        return self.mode is not WindowMode.NONE


class Partitioning(str, enum.Enum):
    KEY_HASH = "KeyHash"
    ROUND_ROBIN = "RoundRobin"


@dataclass(frozen=True)
class FederationSpec:
    responsible_site: str
    site_id: str | None = None

    def __post_init__(self) -> None:
        if not self.responsible_site:
            raise ParameterError("federation.responsibleSite", "federated specs need a responsible site")


@dataclass(frozen=True)
class SynopsisSpec:
    """Full description of one maintained synopsis.

    ``params`` holds the kind-specific parameters, including ``seed``; two sites
    that build the same spec end up with structurally identical, mergeable
    states. Kind-specific validation lives with the synopsis classes
    (:func:`sde.synopses.validate_spec`).
    """

    synopsis_id: str
    kind: Kind
    dataset_id: str
    scope: Scope = field(default_factory=Scope.whole_source)
    key_field: int = 0
    value_fields: tuple[int, ...] = ()
    params: Mapping[str, Any] = field(default_factory=dict)
    parallelism: int = 1
    partitioning: Partitioning = Partitioning.KEY_HASH
    window: WindowSpec = field(default_factory=WindowSpec)
    continuous: bool = False
    federation: FederationSpec | None = None
    query: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        if not self.synopsis_id:
            raise ParameterError("synopsisID", "must be non-empty")
        if not self.dataset_id:
            raise ParameterError("datasetKey", "must be non-empty")
        object.__setattr__(self, "kind", parse_kind(self.kind))
        if not isinstance(self.partitioning, Partitioning):
            try:
                object.__setattr__(self, "partitioning", Partitioning(self.partitioning))
            except ValueError:
                raise ParameterError("partitioning", f"unknown scheme {self.partitioning!r}") from None
        if not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise ParameterError("parallelism", "must be an integer >= 1")
        if self.scope.type is ScopeType.SINGLE_STREAM and self.parallelism != 1:
            object.__setattr__(self, "parallelism", 1)
        if not isinstance(self.key_field, int) or self.key_field < 0:
            raise ParameterError("keyIndex", "must be a non-negative integer")
        vf = tuple(self.value_fields)
        if any(not isinstance(i, int) or i < 0 for i in vf):
            raise ParameterError("valueIndexes", "must be non-negative integers")
        object.__setattr__(self, "value_fields", vf)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def federated(self) -> bool:
        return self.federation is not None


@dataclass(frozen=True, order=True)
class PartitionKey:
    """Routing key shared by the data path and the query path."""

    synopsis_id: str
    shard: int
    stream_id: str | None = None


@dataclass(frozen=True)
class Degenerate:
    """Estimate result for inputs where the quantity is undefined (e.g. a flat series)."""

    reason: str


# ---------------------------------------------------------------------------
# Hashing and keys


def stable_hash(data: str | bytes, seed: int = 0) -> int:
    """64-bit XXH64 digest of ``data`` (UTF-8 for strings) with a fixed seed.

    XXH64 is fully specified and platform independent, so every site and every
    run computes the same value. ``stable_hash("")`` is ``0xEF46DB3751D8E999``.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    return xxhash.xxh64_intdigest(data, seed & 0xFFFFFFFFFFFFFFFF)


def item_bytes(value: Any) -> bytes:
    """Canonical byte encoding of a field value used as a sketch item.

    Strings hash as their UTF-8 bytes. Numbers get a one-byte tag so that the
    string ``"5"`` and the number ``5`` are different items, and integral
    floats hash like the equal integer (JSON may deliver ``5.0`` for ``5``).
    """
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, bool):
        return b"\x00b1" if value else b"\x00b0"
    if isinstance(value, int):
        return b"\x00n" + str(value).encode()
    if isinstance(value, float):
        if math.isfinite(value) and value.is_integer():
            return b"\x00n" + str(int(value)).encode()
        return b"\x00f" + repr(value).encode()
    if isinstance(value, (tuple, list)):
        return b"\x00t" + b"\x1f".join(item_bytes(v) for v in value)
    raise RecordError(f"unsupported item type {type(value).__name__}")


def item_key(value: Any) -> int:
    return xxhash.xxh64_intdigest(item_bytes(value))


def shard_for_stream(stream_id: str, parallelism: int) -> int:
    return stable_hash(stream_id) % parallelism


def make_partition_keys(spec: SynopsisSpec, observed_streams: Iterable[str] = ()) -> list[PartitionKey]:
    """Keys produced when a synopsis is registered.

    The same function serves the data path and the query path, so both agree
    on where a stream's state lives.
    """
    scope = spec.scope.type
    if scope is ScopeType.SINGLE_STREAM:
        return [PartitionKey(spec.synopsis_id, 0, spec.scope.stream_id)]
    if scope is ScopeType.PER_STREAM:
        return [
            PartitionKey(spec.synopsis_id, shard_for_stream(s, spec.parallelism), s)
            for s in sorted(set(observed_streams))
        ]
    if scope is ScopeType.WHOLE_SOURCE:
        return [PartitionKey(spec.synopsis_id, i) for i in range(spec.parallelism)]
    raise ProtocolError("schema_error", f"unknown scope {scope!r}", field="scope")


def number(value: Any, what: str = "value") -> float:
    """Coerce a record field to float, rejecting strings and booleans."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RecordError(f"{what} must be numeric, got {value!r}")
    return float(value)


def pick(values: Sequence[Any], index: int) -> Any:
    try:
        return values[index]
    except IndexError:
        raise RecordError(f"record has no field {index}") from None
