"""Shared plumbing for the per-stream time-series synopses (DFT and RHP).

Both keep one count-based sliding window per stream, keyed by the record's
key field, and answer the same query shapes:

* ``{"stream": s}`` -> the stream's feature estimate, or :class:`Degenerate`
* ``{"pair": [a, b]}`` -> approximate Pearson correlation of two streams
* ``{"candidates": true}`` -> pairs hashed to the same or adjacent buckets
* ``{"similar": true}`` -> ``{"pairs": [...], "checked": n}``: the candidate
  pairs whose feature similarity reaches the synopsis threshold, and the
  number of candidates checked. For DFT the similarity is an upper bound of
  the true correlation, so no pair at or above the threshold is lost.
* no query -> ``{stream: estimate}`` for every stream

Their "merge" is the union of disjoint per-stream states. For federation they
ship a digest (coefficients or signatures only), which answers the same
queries without the raw windows.
"""

from __future__ import annotations

import copy
import itertools
import math
from typing import Any, ClassVar, Hashable, Iterable

import numpy as np

from ..core import Degenerate, MergeError, ProtocolError, RecordError, number, pick
from .base import Synopsis, _tuplify, check_query, require


class Ring:
    """Fixed-capacity ring buffer of floats; ``ordered()`` is oldest first."""

    __slots__ = ("buf", "head", "count")

    def __init__(self, n: int) -> None:
        self.buf = np.zeros(n, dtype=np.float64)
        self.head = 0
        self.count = 0

    @property
    def full(self) -> bool:
        return self.count == len(self.buf)

    def push(self, x: float) -> float | None:
        """Append ``x``; return the evicted value once the ring is full."""
        n = len(self.buf)
        if self.count < n:
            self.buf[self.count] = x
            self.count += 1
            return None
        old = float(self.buf[self.head])
        self.buf[self.head] = x
        self.head = (self.head + 1) % n
        return old

    def copy(self) -> "Ring":
        out = Ring.__new__(Ring)
        out.buf, out.head, out.count = self.buf.copy(), self.head, self.count
        return out

    def ordered(self) -> np.ndarray:
        if self.count < len(self.buf):
            return self.buf[: self.count].copy()
        return np.roll(self.buf, -self.head)


def window_param(params: dict[str, Any]) -> int:
    return require(params, "window", int, low=2, low_open=False)


def _expand(starts_a, sizes_a, starts_b, sizes_b) -> tuple[np.ndarray, np.ndarray]:
    """All (a, b) positions of the cross products of paired groups."""
    total = sizes_a * sizes_b
    rep = np.repeat(np.arange(len(total)), total)
    local = np.arange(int(total.sum())) - np.repeat(np.cumsum(total) - total, total)
    nb = sizes_b[rep]
    return starts_a[rep] + local // nb, starts_b[rep] + local % nb


def neighbour_rows(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row pairs ``(i, j)``, ``i < j``, whose cells are equal or adjacent.

    Adjacent means Chebyshev distance 1. Rows are grouped by cell and every
    pair of neighbouring occupied cells contributes its cross product, so the
    cost follows the occupied cells and the candidates, not all row pairs.
    """
    n, d = cells.shape
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    lo = cells.min(axis=0)
    base = int((cells - lo).max()) + 3
    if d * math.log2(base) > 62:
        raise ValueError("cell grid too large to index")
    weights = base ** np.arange(d, dtype=np.int64)
    keys = (cells - lo + 1) @ weights
    order = np.argsort(keys, kind="stable")
    uniq, starts, sizes = np.unique(keys[order], return_index=True, return_counts=True)
    found_a, found_b = [], []
    # Same cell: the upper triangle of each group.
    pa, pb = _expand(starts, sizes, starts, sizes)
    keep = pa < pb
    found_a.append(pa[keep])
    found_b.append(pb[keep])
    # Each unordered pair of distinct neighbouring cells once: offsets that
    # are lexicographically positive.
    for off in itertools.product((-1, 0, 1), repeat=d):
        nz = next((o for o in off if o), 0)
        if nz <= 0:
            continue
        target = uniq + np.asarray(off, dtype=np.int64) @ weights
        pos = np.searchsorted(uniq, target)
        pos[pos == len(uniq)] = 0
        hit = np.flatnonzero(uniq[pos] == target)
        if len(hit):
            j = pos[hit]
            pa, pb = _expand(starts[hit], sizes[hit], starts[j], sizes[j])
            found_a.append(pa)
            found_b.append(pb)
    ra, rb = order[np.concatenate(found_a)], order[np.concatenate(found_b)]
    return np.minimum(ra, rb), np.maximum(ra, rb)


class FeatureQueries:
    """Query logic shared by the window-keeping synopses and their digests."""

    kind: ClassVar[str]

    def stream_ids(self) -> list[Hashable]:
        raise NotImplementedError

    def feature(self, stream: Hashable) -> Any:
        """Per-stream estimate object, or :class:`Degenerate`."""
        raise NotImplementedError

    def similarity(self, fa: Any, fb: Any) -> float:
        raise NotImplementedError

    def cell(self, f: Any) -> tuple[int, ...]:
        raise NotImplementedError

    def _feature_checked(self, stream: Any) -> Any:
        stream = _tuplify(stream)
        if stream not in set(self.stream_ids()):
            raise ProtocolError("unknown_stream", f"{self.kind} has no stream {stream!r}", stream=stream)
        return self.feature(stream)

    def embedding(self, f: Any) -> np.ndarray:
        """Real vector whose squared distances determine :meth:`similarity`."""
        raise NotImplementedError

    def similarity_from_d2(self, d2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def feature_table(self) -> tuple[list, np.ndarray, np.ndarray]:
        """Keys, embeddings and cells of every non-degenerate stream."""
        keys, emb, cells = [], [], []
        for s in self.stream_ids():
            f = self.feature(s)
            if isinstance(f, Degenerate):
                continue
            keys.append(s)
            emb.append(self.embedding(f))
            cells.append(self.cell(f))
        return (keys, np.array(emb, dtype=np.float64).reshape(len(keys), -1),
                np.array(cells, dtype=np.int64).reshape(len(keys), -1))

    def _pairs(self, threshold: float | None) -> tuple[list[tuple[Any, Any]], int]:
        keys, emb, cells = self.feature_table()
        ia, ib = neighbour_rows(cells)
        checked = len(ia)
        if threshold is not None and checked:
            d = emb[ia] - emb[ib]
            # The slack only widens a superset filter; it never drops a pair.
            keep = self.similarity_from_d2(np.einsum("ij,ij->i", d, d)) >= threshold - 1e-9
            ia, ib = ia[keep], ib[keep]
        order = np.lexsort((ib, ia))
        return [(keys[a], keys[b]) for a, b in zip(ia[order].tolist(), ib[order].tolist())], checked

    def candidate_pairs(self) -> list[tuple[Any, Any]]:
        """Pairs of streams whose cells are equal or adjacent."""
        return self._pairs(None)[0]

    def similar_pairs(self) -> tuple[list[tuple[Any, Any]], int]:
        """Candidate pairs whose similarity reaches the threshold, and how many candidates were checked."""
        return self._pairs(self.params["threshold"])

    def estimate(self, query=None) -> Any:
        q = check_query(self.kind, query, "stream", "pair", "candidates", "similar")
        if "stream" in q:
            return self._feature_checked(q["stream"])
        if "pair" in q:
            pair = q["pair"]
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ProtocolError("schema_error", "'pair' must name exactly two streams", field="pair")
            fa, fb = (self._feature_checked(s) for s in pair)
            for f in (fa, fb):
                if isinstance(f, Degenerate):
                    return f
            return self.similarity(fa, fb)
        if q.get("similar"):
            pairs, checked = self.similar_pairs()
            return {"pairs": [list(p) for p in pairs], "checked": checked}
        if q.get("candidates"):
            return [list(p) for p in self.candidate_pairs()]
        return {s: self.feature(s) for s in self.stream_ids()}


class SeriesSynopsis(FeatureQueries, Synopsis):
    """Base for synopses keeping one sliding window per stream."""

    window_native = True
    per_stream = True

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.n = self.params["window"]
        self.series: dict[Hashable, Any] = {}

    def new_series(self) -> Any:
        raise NotImplementedError

    def push(self, s: Any, x: float) -> None:
        raise NotImplementedError

    def copy_series(self, s: Any) -> Any:
        raise NotImplementedError

    def copy(self) -> "SeriesSynopsis":
        # Hashing tables are read-only, so a shallow copy may share them.
        out = copy.copy(self)
        out.params = dict(self.params)
        out.series = {k: self.copy_series(v) for k, v in self.series.items()}
        return out

    def stream_ids(self) -> list[Hashable]:
        return list(self.series)

    def extract(self, record, key_field, value_fields):
        if not value_fields:
            raise RecordError(f"{self.kind} needs a value field")
        stream = pick(record.values, key_field)
        x = number(pick(record.values, value_fields[0]), "series value")
        if not np.isfinite(x):
            raise RecordError(f"series value must be finite, got {x!r}")
        return stream, x

    def add(self, stream, x: float) -> None:
        x = number(x, "series value")
        s = self.series.get(stream)
        if s is None:
            s = self.series[stream] = self.new_series()
        self.push(s, x)
        self.items_seen += 1

    def window(self, stream: Hashable) -> np.ndarray:
        """Current window contents of ``stream``, oldest first."""
        return self.series[stream].ring.ordered()

    def _merge_into(self, out, other) -> None:
        clash = set(out.series) & set(other.series)
        if clash:
            raise MergeError(
                f"{self.kind} states overlap on streams {sorted(map(str, clash))[:5]}",
                left={"kind": self.kind, "params": self.params},
                right={"kind": other.kind, "params": other.params},
            )
        for k, v in other.series.items():
            out.series[k] = self.copy_series(v)

    def _stream_meta(self) -> list:
        return [list(k) if isinstance(k, tuple) else k for k in self.series]

    @staticmethod
    def _stream_keys(meta_streams: Iterable) -> list:
        return [_tuplify(k) for k in meta_streams]
