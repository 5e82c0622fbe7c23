"""The uniform add / estimate / merge contract and the binary state frame.

Frame layout (all integers little-endian)::

    magic        4 bytes  b"SDEF"
    version      u8       1
    flags        u8       bit 0: payload is zlib-compressed
    kind_len     u16      then kind name, UTF-8
    params_len   u32      then params as canonical JSON (sorted keys, no spaces)
    n_seeds      u16      then n_seeds x u64
    items_seen   u64
    payload_len  u32      then payload

The payload is ``u32 meta_len | meta JSON | arrays`` where each array is
``u8 dtype_len | dtype str | u8 ndim | ndim x u64 shape | raw bytes``.
"""

from __future__ import annotations

import copy
import json
import struct
import zlib
from abc import ABC, abstractmethod
from typing import Any, ClassVar, Mapping, Sequence

import numpy as np

from ..core import MergeError, ParameterError, ProtocolError, RecordError, StreamRecord, pick

MAGIC = b"SDEF"
FRAME_VERSION = 1


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def pack_arrays(arrays: Sequence[np.ndarray]) -> bytes:
    out = bytearray()
    for a in arrays:
        a = np.ascontiguousarray(a)
        dt = a.dtype.newbyteorder("<").str.encode()
        out += struct.pack("<B", len(dt)) + dt + struct.pack("<B", a.ndim)
        out += struct.pack(f"<{a.ndim}Q", *a.shape)
        out += a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
    return bytes(out)


def unpack_arrays(buf: bytes) -> list[np.ndarray]:
    arrays = []
    pos = 0
    while pos < len(buf):
        (n,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dt = np.dtype(buf[pos:pos + n].decode())
        pos += n
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arrays.append(np.frombuffer(buf[pos:pos + size], dtype=dt).reshape(shape).astype(dt.newbyteorder("=")))
        pos += size
    return arrays


def _listify(x: Any) -> Any:
    if isinstance(x, tuple):
        return [_listify(v) for v in x]
    return x


def _tuplify(x: Any) -> Any:
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    return x


def require(params: Mapping[str, Any], name: str, kind: type = float, *, low=None, high=None,
            low_open=True, high_open=True, default: Any = None) -> Any:
    """Fetch and range-check one parameter, raising :class:`ParameterError` naming it."""
    if name not in params or params[name] is None:
        if default is None:
            raise ParameterError(name, "missing required parameter")
        return default
    raw = params[name]
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ParameterError(name, f"must be a number, got {raw!r}")
    if kind is int:
        if float(raw) != int(raw):
            raise ParameterError(name, f"must be an integer, got {raw!r}")
        val: Any = int(raw)
    else:
        val = float(raw)
    if low is not None and (val <= low if low_open else val < low):
        raise ParameterError(name, f"must be {'>' if low_open else '>='} {low}, got {raw!r}")
    if high is not None and (val >= high if high_open else val > high):
        raise ParameterError(name, f"must be {'<' if high_open else '<='} {high}, got {raw!r}")
    return val


class Synopsis(ABC):
    """Base class of every synopsis kind, built-in or plugged in.

    Subclasses define ``kind``, validate their parameters in
    :meth:`validate_params`, and implement ``add``, ``estimate``, ``merge`` and
    the ``_state`` / ``_load_state`` pair used by the frame codec. ``merge``
    never mutates its inputs.
    """

    kind: ClassVar[str] = ""
    n_seeds: ClassVar[int] = 1
    # Kinds that expire data themselves over a count window (no panes needed).
    window_native: ClassVar[bool] = False
    # Kinds whose federation ships per-stream digests rather than whole states.
    per_stream: ClassVar[bool] = False

    def __init__(self, params: Mapping[str, Any], seeds: Sequence[int]) -> None:
        self.params = self.validate_params(dict(params))
        seeds = tuple(int(s) for s in seeds)
        if len(seeds) < self.n_seeds:
            raise ParameterError("seed", f"{self.kind} needs {self.n_seeds} seed(s), got {len(seeds)}")
        self.seeds = seeds
        self.items_seen = 0

    # -- contract ---------------------------------------------------------

    @classmethod
    def validate_params(cls, params: dict[str, Any]) -> dict[str, Any]:
        return params

    @abstractmethod
    def add(self, item: Any, *args: Any) -> None: ...

    @abstractmethod
    def estimate(self, query: Mapping[str, Any] | None = None) -> Any: ...

    @abstractmethod
    def _merge_into(self, out: "Synopsis", other: "Synopsis") -> None:
        """Fold ``other`` into ``out`` (a copy of self)."""

    @abstractmethod
    def _state(self) -> tuple[dict[str, Any], list[np.ndarray]]: ...

    @abstractmethod
    def _load_state(self, meta: dict[str, Any], arrays: list[np.ndarray]) -> None: ...

    # -- record plumbing --------------------------------------------------

    def extract(self, record: StreamRecord, key_field: int, value_fields: Sequence[int]) -> tuple:
        """Arguments for :meth:`add` taken from one record. Default: the key field as item."""
        return (pick(record.values, key_field),)

    def add_record(self, record: StreamRecord, key_field: int = 0, value_fields: Sequence[int] = ()) -> None:
        args = self.extract(record, key_field, value_fields)
        self.add(*args)

    def add_records(self, records: Sequence[StreamRecord], key_field: int = 0,
                    value_fields: Sequence[int] = ()) -> list[tuple[int, RecordError]]:
        """Add many records; invalid ones are skipped and reported, the rest applied."""
        rejected = []
        good = []
        for i, r in enumerate(records):
            try:
                good.append(self.extract(r, key_field, value_fields))
            except RecordError as exc:
                rejected.append((i, exc))
        self.add_many(good)
        return rejected

    def add_many(self, arg_tuples: Sequence[tuple]) -> None:
        for args in arg_tuples:
            self.add(*args)

    # -- merge ------------------------------------------------------------

    def mergeable_with(self, other: "Synopsis") -> bool:
        return (type(self) is type(other) and self.kind == other.kind
                and canonical_json(self.params) == canonical_json(other.params)
                and self.seeds == other.seeds)

    def merge(self, other: "Synopsis") -> "Synopsis":
        if not self.mergeable_with(other):
            raise MergeError(
                f"cannot merge {self.kind} with {getattr(other, 'kind', type(other).__name__)}",
                left={"kind": self.kind, "params": self.params, "seeds": list(self.seeds)},
                right={"kind": getattr(other, "kind", None), "params": getattr(other, "params", None),
                       "seeds": list(getattr(other, "seeds", ()))},
            )
        out = self.copy()
        self._merge_into(out, other)
        out.items_seen = self.items_seen + other.items_seen
        return out

    def empty_like(self) -> "Synopsis":
        return type(self)(self.params, self.seeds)

    def copy(self) -> "Synopsis":
        return copy.deepcopy(self)

    # -- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        meta, arrays = self._state()
        meta_b = canonical_json(_listify(meta))
        payload = struct.pack("<I", len(meta_b)) + meta_b + pack_arrays(arrays)
        flags = 0
        packed = zlib.compress(payload, 6)
        if len(packed) < len(payload):
            payload, flags = packed, 1
        kind_b = self.kind.encode("utf-8")
        params_b = canonical_json(self.params)
        return b"".join([
            MAGIC,
            struct.pack("<BBH", FRAME_VERSION, flags, len(kind_b)), kind_b,
            struct.pack("<I", len(params_b)), params_b,
            struct.pack("<H", len(self.seeds)), struct.pack(f"<{len(self.seeds)}Q", *self.seeds),
            struct.pack("<Q", self.items_seen),
            struct.pack("<I", len(payload)), payload,
        ])

    def state_equal(self, other: "Synopsis") -> bool:
        """Bit-level equality of the serialized states."""
        return self.to_bytes() == other.to_bytes()

    def __repr__(self) -> str:
        return f"{type(self).__name__}(params={self.params}, items_seen={self.items_seen})"


def read_frame(buf: bytes) -> tuple[str, dict, tuple[int, ...], int, dict, list[np.ndarray]]:
    if buf[:4] != MAGIC:
        raise ProtocolError("frame_error", "not a synopsis frame")
    version, flags, klen = struct.unpack_from("<BBH", buf, 4)
    if version != FRAME_VERSION:
        raise ProtocolError("frame_error", f"unsupported frame version {version}")
    pos = 8
    kind = buf[pos:pos + klen].decode("utf-8")
    pos += klen
    (plen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params = json.loads(buf[pos:pos + plen])
    pos += plen
    (ns,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    seeds = struct.unpack_from(f"<{ns}Q", buf, pos)
    pos += 8 * ns
    (items_seen,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    (paylen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    payload = buf[pos:pos + paylen]
    if len(payload) != paylen:
        raise ProtocolError("frame_error", "truncated frame")
    if flags & 1:
        payload = zlib.decompress(payload)
    (mlen,) = struct.unpack_from("<I", payload, 0)
    meta = json.loads(payload[4:4 + mlen])
    arrays = unpack_arrays(payload[4 + mlen:])
    return kind, params, tuple(seeds), items_seen, meta, arrays


def check_query(kind: str, query: Any, *allowed: str) -> dict[str, Any]:
    """Normalize a query payload to a dict and reject keys the kind does not know."""
    if query is None:
        return {}
    if not isinstance(query, Mapping):
        raise ProtocolError("kind_mismatch", f"{kind} query must be an object, got {query!r}")
    unknown = set(query) - set(allowed)
    if unknown:
        raise ProtocolError("kind_mismatch", f"{kind} does not answer {sorted(unknown)}")
    return dict(query)


__all__ = [
    "Synopsis",
    "read_frame",
    "require",
    "check_query",
    "canonical_json",
    "pack_arrays",
    "unpack_arrays",
    "RecordError",
    "_tuplify",
]
