"""HyperLogLog distinct counting over a 64-bit hash.

The first ``m`` bits of an item's hash select one of ``2^m`` registers; the
register keeps the maximum rank (leading zeros + 1) seen in the remaining
``64 - m`` bits. The estimate is the bias-corrected harmonic mean of
``2^register`` with the usual linear-counting correction for small
cardinalities and the 64-bit large-range correction. Relative standard
error is about ``1.04 / sqrt(2^m)``.
"""

from __future__ import annotations

import math

import numpy as np
import xxhash

from ..core import item_bytes
from .base import Synopsis, check_query, require

_TWO64 = float(1 << 64)


def hll_alpha(registers: int) -> float:
    # Exact bias constants for the small register counts; 8 comes from
    # integrating the defining expression numerically.
    table = {8: 0.6256, 16: 0.673, 32: 0.697, 64: 0.709}
    return table.get(registers, 0.7213 / (1.0 + 1.079 / registers))


def precision_for_rse(rse: float) -> int:
    return max(2, math.ceil(math.log2((1.04 / rse) ** 2)))


class HyperLogLog(Synopsis):
    kind = "HyperLogLog"

    @classmethod
    def validate_params(cls, params):
        if params.get("m") is None and params.get("rse") is not None:
            params["m"] = precision_for_rse(require(params, "rse", low=0, high=1))
        params["m"] = require(params, "m", int, low=2, high=18, low_open=False, high_open=False)
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.m = self.params["m"]
        self.registers = np.zeros(1 << self.m, dtype=np.uint8)
        self._seed = self.seeds[0] & 0xFFFFFFFFFFFFFFFF
        self._rest = 64 - self.m
        self._rest_mask = (1 << self._rest) - 1

    def _slot(self, item) -> tuple[int, int]:
        h = xxhash.xxh64_intdigest(item_bytes(item), self._seed)
        idx = h >> self._rest
        w = h & self._rest_mask
        rank = self._rest - w.bit_length() + 1
        return idx, rank

    def add(self, item) -> None:
        idx, rank = self._slot(item)
        if rank > self.registers[idx]:
            self.registers[idx] = rank
        self.items_seen += 1

    def add_many(self, arg_tuples) -> None:
        regs = self.registers
        for args in arg_tuples:
            idx, rank = self._slot(args[0])
            if rank > regs[idx]:
                regs[idx] = rank
        self.items_seen += len(arg_tuples)

    def distinct(self) -> float:
        size = len(self.registers)
        raw = hll_alpha(size) * size * size / float(np.sum(np.exp2(-self.registers.astype(np.float64))))
        zeros = int(np.count_nonzero(self.registers == 0))
        if raw <= 2.5 * size and zeros:
            return size * math.log(size / zeros)
        if raw > _TWO64 / 30.0:
            return -_TWO64 * math.log1p(-raw / _TWO64)
        return raw

    def estimate(self, query=None) -> float:
        check_query(self.kind, query)
        return self.distinct()

    def _merge_into(self, out, other) -> None:
        np.maximum(out.registers, other.registers, out=out.registers)

    def _state(self):
        return {}, [self.registers]

    def _load_state(self, meta, arrays) -> None:
        (self.registers,) = arrays
