"""Count-Min sketch: frequency estimates that only ever over-count.

A ``depth x width`` counter matrix with width ``ceil(e / epsilon)`` and
depth ``ceil(ln(1 / delta))``. Each row has its own pairwise-independent
hash; an item bumps one counter per row and its estimate is the smallest of
those counters. With probability at least ``1 - delta`` the over-count is at
most ``epsilon * N``.
"""

from __future__ import annotations

import math
from typing import Any, Mapping

import numpy as np

from ..core import ProtocolError, item_key
from ..hashing import PolyHash, derive_seeds, keys_of
from .base import Synopsis, check_query, require


def countmin_dims(epsilon: float, delta: float) -> tuple[int, int]:
    """``(width, depth)`` for the given error bound and failure probability."""
    return math.ceil(math.e / epsilon), math.ceil(math.log(1.0 / delta))


class CountMin(Synopsis):
    kind = "CountMin"

    @classmethod
    def validate_params(cls, params):
        eps = require(params, "epsilon", low=0, high=1)
        delta = require(params, "delta", low=0, high=1)
        params["epsilon"], params["delta"] = eps, delta
        return params

    def __init__(self, params: Mapping[str, Any], seeds) -> None:
        super().__init__(params, seeds)
        self.width, self.depth = countmin_dims(self.params["epsilon"], self.params["delta"])
        self._rows = [PolyHash(s, 2) for s in derive_seeds(self.seeds[0], self.depth)]
        self.table = np.zeros((self.depth, self.width), dtype=np.int64)

    def _columns(self, key: int) -> list[int]:
        return [h(key) % self.width for h in self._rows]

    def add(self, item: Any, count: int = 1) -> None:
        key = item_key(item)
        for row, col in enumerate(self._columns(key)):
            self.table[row, col] += count
        self.items_seen += count

    def add_many(self, arg_tuples) -> None:
        if not arg_tuples:
            return
        keys = keys_of(a[0] for a in arg_tuples)
        for row, h in enumerate(self._rows):
            cols = (h.many(keys) % np.uint64(self.width)).astype(np.int64)
            self.table[row] += np.bincount(cols, minlength=self.width)
        self.items_seen += len(arg_tuples)

    def count(self, item: Any) -> int:
        key = item_key(item)
        return int(min(self.table[row, col] for row, col in enumerate(self._columns(key))))

    def estimate(self, query=None) -> int:
        q = check_query(self.kind, query, "item")
        if "item" not in q:
            raise ProtocolError("kind_mismatch", "CountMin queries need an 'item'")
        return self.count(q["item"])

    def _merge_into(self, out, other) -> None:
        out.table += other.table

    def _state(self):
        return {}, [self.table]

    def _load_state(self, meta, arrays) -> None:
        (self.table,) = arrays
