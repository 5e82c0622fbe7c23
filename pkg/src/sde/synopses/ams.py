"""AMS sketch for L2 norms and inner products of frequency vectors.

Rows are independent linear projections of the frequency vector ``v``. Each
row ``j`` owns a four-wise independent sign family ``xi_j`` (a degree-3
polynomial over GF(2^31 - 1)) and a pairwise-independent bucket hash; an
update of item ``k`` by weight ``c`` adds ``c * xi_j[k]`` to the counter of
its bucket in every row. The row estimate of ``v1 . v2`` is the sum of
products of corresponding counters and the answer is the median over rows.

Sizing: ``width = ceil(8 / epsilon^2)`` makes each row's relative error
exceed ``epsilon`` with probability at most 1/4 (Chebyshev on the row
variance ``2 F2^2 / width``); ``depth = ceil(ln(1 / delta))`` rows are
combined by the median.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import ProtocolError, RecordError, item_key, pick
from ..hashing import PolyHash, derive_seeds, keys_of
from .base import Synopsis, check_query, require


def ams_dims(epsilon: float, delta: float) -> tuple[int, int]:
    return math.ceil(8.0 / epsilon ** 2), math.ceil(math.log(1.0 / delta))


def _weight(value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
        raise RecordError(f"AMS weights must be integers, got {value!r}")
    return int(value)


class AMSSketch(Synopsis):
    kind = "AMSSketch"

    @classmethod
    def validate_params(cls, params):
        params["epsilon"] = require(params, "epsilon", low=0, high=1)
        params["delta"] = require(params, "delta", low=0, high=1)
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.width, self.depth = ams_dims(self.params["epsilon"], self.params["delta"])
        row_seeds = derive_seeds(self.seeds[0], 2 * self.depth)
        self._buckets = [PolyHash(s, 2) for s in row_seeds[0::2]]
        self._signs = [PolyHash(s, 4) for s in row_seeds[1::2]]
        self.counters = np.zeros((self.depth, self.width), dtype=np.int64)

    def extract(self, record, key_field, value_fields):
        item = pick(record.values, key_field)
        if value_fields:
            return item, _weight(pick(record.values, value_fields[0]))
        return (item,)

    def add(self, item, weight: int = 1) -> None:
        weight = _weight(weight)
        key = item_key(item)
        for row in range(self.depth):
            col = self._buckets[row](key) % self.width
            sign = 1 if self._signs[row](key) & 1 else -1
            self.counters[row, col] += sign * weight
        self.items_seen += 1

    def add_many(self, arg_tuples) -> None:
        if not arg_tuples:
            return
        keys = keys_of(a[0] for a in arg_tuples)
        weights = np.fromiter((_weight(a[1]) if len(a) > 1 else 1 for a in arg_tuples), dtype=np.int64)
        w = np.uint64(self.width)
        for row in range(self.depth):
            cols = (self._buckets[row].many(keys) % w).astype(np.int64)
            signs = (self._signs[row].many(keys) & np.uint64(1)).astype(np.int64) * 2 - 1
            np.add.at(self.counters[row], cols, signs * weights)
        self.items_seen += len(arg_tuples)

    def inner_product(self, other: "AMSSketch") -> float:
        if not self.mergeable_with(other):
            raise ProtocolError("kind_mismatch", "inner product needs sketches with equal parameters and seeds")
        rows = np.einsum("ij,ij->i", self.counters, other.counters)
        return float(np.median(rows))

    def self_join(self) -> float:
        """Estimate of ``F2 = sum_k v[k]^2``."""
        return self.inner_product(self)

    def estimate(self, query=None) -> float:
        q = check_query(self.kind, query, "moment", "other")
        other = q.get("other")
        if other is not None:
            if not isinstance(other, AMSSketch):
                raise ProtocolError("kind_mismatch", "'other' must resolve to an AMS sketch")
            return self.inner_product(other)
        return self.self_join()

    def _merge_into(self, out, other) -> None:
        out.counters += other.counters

    def _state(self):
        return {}, [self.counters]

    def _load_state(self, meta, arrays) -> None:
        (self.counters,) = arrays
