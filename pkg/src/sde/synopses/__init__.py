"""The synopsis library and its kind registry.

Built-in kinds are registered under their :class:`~sde.core.SynopsisKind`
names. New kinds are added at runtime with :func:`register_plugin`; from then
on a Build request naming the plugin constructs it like any built-in, and its
states travel through the same frame codec and merge path.
"""

from __future__ import annotations

import threading
from typing import Any, Callable, Mapping, Sequence

from ..core import (
    Kind,
    ParameterError,
    Partitioning,
    ProtocolError,
    RegistrationError,
    SynopsisSpec,
    WindowMode,
    stable_hash,
)
from ..hashing import derive_seeds
from .ams import AMSSketch
from .base import Synopsis, canonical_json, read_frame
from .bloom import BloomFilter
from .chain import ChainSampler
from .coreset import CoreSetTree, coreset_tree_reduce
from .countmin import CountMin
from .dft import DFT, DFTDigest, dft_bucketize, dft_coefficients, dft_epsilon
from .fm import FMSketch
from .frequent import LossyCounting, StickySampling
from .gk import GKQuantiles
from .hll import HyperLogLog
from .rhp import RHP, RHPDigest, rhp_bucket, rhp_signature, rhp_similarity
from .values import DFTEstimate, ItemCount, RHPEstimate, WeightedPoints

Factory = Callable[[Mapping[str, Any], Sequence[int]], Synopsis]

BUILTINS: dict[str, type[Synopsis]] = {
    cls.kind: cls
    for cls in (CountMin, BloomFilter, FMSketch, HyperLogLog, AMSSketch, DFT, RHP,
                LossyCounting, StickySampling, ChainSampler, GKQuantiles, CoreSetTree)
}
# Kinds that only appear on the wire (federation digests); never built directly.
_WIRE_ONLY: dict[str, type[Synopsis]] = {DFTDigest.kind: DFTDigest, RHPDigest.kind: RHPDigest}

_plugins: dict[str, Factory] = {}
_lock = threading.Lock()


def register_plugin(name: str, factory: Factory) -> None:
    """Make ``name`` buildable. ``factory(params, seeds)`` must return a :class:`Synopsis`."""
    if not name or not isinstance(name, str):
        raise RegistrationError("plugin name must be a non-empty string")
    if not callable(factory):
        raise RegistrationError(f"factory for {name!r} is not callable")
    with _lock:
        if name in BUILTINS or name in _WIRE_ONLY or name in _plugins:
            raise RegistrationError(f"synopsis kind {name!r} is already registered", name=name)
        _plugins[name] = factory


def unregister_plugin(name: str) -> None:
    with _lock:
        _plugins.pop(name, None)


def registered_kinds() -> list[str]:
    with _lock:
        return sorted(BUILTINS) + sorted(_plugins)


def resolve(kind: Kind | str) -> Factory:
    name = str(kind)
    if name in BUILTINS:
        return BUILTINS[name]
    if name in _WIRE_ONLY:
        return _WIRE_ONLY[name]
    with _lock:
        factory = _plugins.get(name)
    if factory is None:
        raise ProtocolError("unknown_kind", f"unknown synopsis kind {name!r}", kind=name)
    return factory


def new_state(kind: Kind | str, params: Mapping[str, Any], seeds: Sequence[int]) -> Synopsis:
    """Empty state of ``kind``; parameter problems raise :class:`ParameterError`."""
    name = str(kind)
    state = resolve(name)(dict(params), tuple(seeds))
    if not isinstance(state, Synopsis):
        raise RegistrationError(f"factory for {name!r} returned {type(state).__name__}, not a Synopsis")
    if state.kind != name:
        state.kind = name
    return state


def seeds_for(spec: SynopsisSpec, n: int = 1) -> tuple[int, ...]:
    """Seeds of a spec: ``params["seed"]`` when given, else derived from the synopsis id.

    Both choices are identical on every site that receives the same request.
    """
    raw = spec.params.get("seed")
    if raw is None:
        base = stable_hash(spec.synopsis_id)
    elif isinstance(raw, bool) or not isinstance(raw, int) or raw < 0:
        raise ParameterError("seed", f"must be a non-negative integer, got {raw!r}")
    else:
        base = raw
    return (base,) + derive_seeds(base, n - 1) if n > 1 else (base,)


_COUNT_WINDOW_KINDS = {DFT.kind, RHP.kind, ChainSampler.kind}


def effective_params(spec: SynopsisSpec) -> dict[str, Any]:
    """Validated, completed parameters used to build the spec's states.

    The native-window kinds take their window length from a ``CountSliding``
    window when the params do not name one.
    """
    name = str(spec.kind)
    params = {k: v for k, v in spec.params.items() if k != "seed"}
    if name in _COUNT_WINDOW_KINDS:
        if spec.window.mode is WindowMode.TIME_SLIDING:
            raise ParameterError("window.mode", f"{name} keeps its own count window; TimeSliding is not supported")
        if spec.window.mode is WindowMode.COUNT_SLIDING:
            if spec.window.slide != 1:
                raise ParameterError("window.slide", f"{name} slides one tuple at a time; use slide 1")
            params.setdefault("window", spec.window.length)
    if name in (DFT.kind, RHP.kind):
        if not spec.value_fields:
            raise ParameterError("valueIndexes", f"{name} needs the index of the series value")
        if spec.partitioning is Partitioning.ROUND_ROBIN:
            raise ParameterError("partitioning", f"{name} keeps per-stream windows; use KeyHash")
    if name == CoreSetTree.kind and spec.value_fields:
        params.setdefault("dimensionality", len(spec.value_fields))
    if name in BUILTINS:
        return BUILTINS[name].validate_params(params)
    resolve(name)
    return params


def state_for_spec(spec: SynopsisSpec) -> Synopsis:
    name = str(spec.kind)
    factory = resolve(name)
    n = getattr(factory, "n_seeds", 1)
    return new_state(name, effective_params(spec), seeds_for(spec, n))


def validate_spec(spec: SynopsisSpec) -> Synopsis:
    """Check a spec end to end by building one empty state; returns that state."""
    return state_for_spec(spec)


def from_bytes(buf: bytes) -> Synopsis:
    """Rebuild a state from its frame; the result serializes back to ``buf`` bit for bit."""
    kind, params, seeds, items_seen, meta, arrays = read_frame(buf)
    state = new_state(kind, params, seeds)
    state._load_state(meta, arrays)
    state.items_seen = items_seen
    return state


def merge_all(states: Sequence[Synopsis]) -> Synopsis:
    if not states:
        raise ValueError("nothing to merge")
    out = states[0]
    for s in states[1:]:
        out = out.merge(s)
    return out


__all__ = [
    "Synopsis",
    "BUILTINS",
    "register_plugin",
    "unregister_plugin",
    "registered_kinds",
    "resolve",
    "new_state",
    "seeds_for",
    "effective_params",
    "state_for_spec",
    "validate_spec",
    "from_bytes",
    "merge_all",
    "canonical_json",
    "AMSSketch",
    "BloomFilter",
    "ChainSampler",
    "CoreSetTree",
    "CountMin",
    "DFT",
    "DFTDigest",
    "FMSketch",
    "GKQuantiles",
    "HyperLogLog",
    "LossyCounting",
    "RHP",
    "RHPDigest",
    "StickySampling",
    "DFTEstimate",
    "RHPEstimate",
    "WeightedPoints",
    "ItemCount",
    "dft_coefficients",
    "dft_bucketize",
    "dft_epsilon",
    "rhp_signature",
    "rhp_similarity",
    "rhp_bucket",
    "coreset_tree_reduce",
]
