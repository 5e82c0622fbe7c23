"""Bloom filter for set membership, sized from (expected elements, false-positive rate)."""

from __future__ import annotations

import math

import numpy as np

from ..core import ProtocolError, item_key
from ..hashing import MASK64, derive_seeds, keys_of, splitmix64, splitmix64_np
from .base import Synopsis, check_query, require


def bloom_dims(elements: int, fpr: float) -> tuple[int, int]:
    """Optimal ``(bits, hashes)``: m = -n ln p / (ln 2)^2, k = (m / n) ln 2."""
    m = math.ceil(-elements * math.log(fpr) / (math.log(2) ** 2))
    k = max(1, round(m / elements * math.log(2)))
    return m, k


class BloomFilter(Synopsis):
    kind = "BloomFilter"

    @classmethod
    def validate_params(cls, params):
        params["elements"] = require(params, "elements", int, low=0)
        params["fpr"] = require(params, "fpr", low=0, high=1)
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.n_bits, self.n_hashes = bloom_dims(self.params["elements"], self.params["fpr"])
        self._s1, self._s2 = derive_seeds(self.seeds[0], 2)
        self.bits = np.zeros(self.n_bits, dtype=np.uint8)

    def _positions(self, key: int) -> list[int]:
        # Kirsch-Mitzenmacher double hashing: h1 + i * h2.
        h1 = splitmix64(key ^ self._s1)
        h2 = splitmix64(key ^ self._s2) | 1
        return [((h1 + i * h2) & MASK64) % self.n_bits for i in range(self.n_hashes)]

    def add(self, item) -> None:
        self.bits[self._positions(item_key(item))] = 1
        self.items_seen += 1

    def add_many(self, arg_tuples) -> None:
        if not arg_tuples:
            return
        keys = keys_of(a[0] for a in arg_tuples)
        h1 = splitmix64_np(keys ^ np.uint64(self._s1))
        h2 = splitmix64_np(keys ^ np.uint64(self._s2)) | np.uint64(1)
        with np.errstate(over="ignore"):
            for i in range(self.n_hashes):
                pos = (h1 + np.uint64(i) * h2) % np.uint64(self.n_bits)
                self.bits[pos.astype(np.int64)] = 1
        self.items_seen += len(arg_tuples)

    def contains(self, item) -> bool:
        return bool(self.bits[self._positions(item_key(item))].all())

    def estimate(self, query=None) -> bool:
        q = check_query(self.kind, query, "item")
        if "item" not in q:
            raise ProtocolError("kind_mismatch", "BloomFilter queries need an 'item'")
        return self.contains(q["item"])

    def _merge_into(self, out, other) -> None:
        out.bits |= other.bits

    def _state(self):
        return {}, [np.packbits(self.bits)]

    def _load_state(self, meta, arrays) -> None:
        self.bits = np.unpackbits(arrays[0])[: self.n_bits].astype(np.uint8)
