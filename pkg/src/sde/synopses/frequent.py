"""Frequent items: Lossy Counting and Sticky Sampling.

Both keep an ``item -> count`` table whose counts undercount the truth by at
most ``epsilon * N`` and report every item whose true frequency is at least
``support * N`` (answering with ``count >= (support - epsilon) * N``).

Lossy Counting is deterministic: the stream is cut into buckets of width
``w = ceil(1 / epsilon)``; each entry carries the maximum count it may have
missed before insertion (``delta``) and entries with ``count + delta <= b``
are dropped at bucket boundaries, ``b`` being the current bucket number.

Sticky Sampling inserts new items with probability ``1 / r``. The rate ``r``
doubles after ``2t, 4t, 8t, ...`` items, ``t = ln(1 / (support * delta)) /
epsilon``, and each doubling thins existing counts by an unbiased coin
toss per unit until the first head. Coins are counter-based draws from the
seed, so a state's future depends only on its serialized contents.
"""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from ..core import ParameterError, item_bytes, item_key
from ..hashing import derive_seeds, uniform
from .base import Synopsis, _listify, _tuplify, check_query, require
from .values import ItemCount


def _sorted_items(table: dict) -> list:
    return sorted(table, key=item_bytes)


def _frequent(counts: dict[Any, int], n: int, support: float, epsilon: float) -> list[ItemCount]:
    cut = (support - epsilon) * n
    hits = [ItemCount(k, c) for k, c in counts.items() if c >= cut and c > 0]
    hits.sort(key=lambda ic: (-ic.count, item_bytes(ic.item)))
    return hits


class LossyCounting(Synopsis):
    kind = "LossyCounting"

    @classmethod
    def validate_params(cls, params):
        params["epsilon"] = require(params, "epsilon", low=0, high=1)
        if params.get("support") is not None:
            params["support"] = require(params, "support", low=0, high=1, high_open=False)
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.width = math.ceil(1.0 / self.params["epsilon"])
        self.n = 0
        self.table: dict[Any, list[int]] = {}   # item -> [count, delta]

    @property
    def bucket(self) -> int:
        return max(1, math.ceil(self.n / self.width))

    def add(self, item) -> None:
        self.n += 1
        entry = self.table.get(item)
        if entry is not None:
            entry[0] += 1
        else:
            self.table[item] = [1, self.bucket - 1]
        if self.n % self.width == 0:
            self._prune(self.n // self.width)
        self.items_seen += 1

    def _prune(self, b: int) -> None:
        self.table = {k: e for k, e in self.table.items() if e[0] + e[1] > b}

    def count(self, item) -> int:
        e = self.table.get(item)
        return e[0] if e else 0

    def frequent(self, support: float) -> list[ItemCount]:
        return _frequent({k: e[0] for k, e in self.table.items()}, self.n, support, self.params["epsilon"])

    def estimate(self, query=None):
        q = check_query(self.kind, query, "item", "support")
        if "item" in q:
            return self.count(_tuplify(q["item"]))
        support = q.get("support", self.params.get("support"))
        if support is None:
            return [ItemCount(k, e[0]) for k, e in sorted(self.table.items(), key=lambda kv: -kv[1][0])]
        return self.frequent(float(support))

    def _merge_into(self, out, other) -> None:
        # An item missing on one side had at most that side's bucket count there.
        miss_self = math.ceil(self.n / self.width)
        miss_other = math.ceil(other.n / other.width)
        table: dict[Any, list[int]] = {}
        for k in set(self.table) | set(other.table):
            a, b = self.table.get(k), other.table.get(k)
            f = (a[0] if a else 0) + (b[0] if b else 0)
            d = (a[1] if a else miss_self) + (b[1] if b else miss_other)
            table[k] = [f, d]
        out.n = self.n + other.n
        out.table = table
        out._prune(math.ceil(out.n / out.width))

    def _state(self):
        keys = _sorted_items(self.table)
        arr = np.array([self.table[k] for k in keys], dtype=np.int64).reshape(-1, 2)
        return {"n": self.n, "items": [_listify(k) for k in keys]}, [arr]

    def _load_state(self, meta, arrays) -> None:
        self.n = meta["n"]
        self.table = {_tuplify(k): [int(f), int(d)] for k, (f, d) in zip(meta["items"], arrays[0])}


class StickySampling(Synopsis):
    kind = "StickySampling"

    @classmethod
    def validate_params(cls, params):
        params["support"] = require(params, "support", low=0, high=1)
        params["epsilon"] = require(params, "epsilon", low=0, high=1)
        params["delta"] = require(params, "delta", low=0, high=1)
        if params["epsilon"] >= params["support"]:
            raise ParameterError("epsilon", "must be smaller than support")
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        p = self.params
        self.t = math.log(1.0 / (p["support"] * p["delta"])) / p["epsilon"]
        self._sample_seed, self._coin_seed = derive_seeds(self.seeds[0], 2)
        self.n = 0
        self.rate = 1
        self.epoch = 0          # number of rate doublings applied
        self.table: dict[Any, int] = {}

    def rate_for(self, n: int) -> int:
        """Sampling rate in force for the ``n``-th element: 1 up to 2t, then 2, 4, ..."""
        if n <= 2 * self.t:
            return 1
        return 1 << max(0, math.ceil(math.log2(n / self.t)) - 1)

    def _thin(self) -> None:
        self.epoch += 1
        kept = {}
        for k, c in self.table.items():
            u = uniform(self._coin_seed ^ item_key(k), self.epoch)
            tails = int(math.floor(-math.log2(1.0 - u)))
            if c - tails > 0:
                kept[k] = c - tails
        self.table = kept

    def add(self, item) -> None:
        self.n += 1
        target = self.rate_for(self.n)
        while self.rate < target:
            self.rate *= 2
            self._thin()
        if item in self.table:
            self.table[item] += 1
        elif self.rate == 1 or uniform(self._sample_seed, self.n) < 1.0 / self.rate:
            self.table[item] = 1
        self.items_seen += 1

    def count(self, item) -> int:
        return self.table.get(item, 0)

    def estimate(self, query=None):
        q = check_query(self.kind, query, "item", "support")
        if "item" in q:
            return self.count(_tuplify(q["item"]))
        return _frequent(self.table, self.n, float(q.get("support", self.params["support"])), self.params["epsilon"])

    def _merge_into(self, out, other) -> None:
        table = dict(self.table)
        for k, c in other.table.items():
            table[k] = table.get(k, 0) + c
        out.table = table
        out.n = self.n + other.n
        out.rate = max(self.rate, other.rate)
        out.epoch = max(self.epoch, other.epoch)

    def _state(self):
        keys = _sorted_items(self.table)
        arr = np.array([self.table[k] for k in keys], dtype=np.int64)
        return {"n": self.n, "rate": self.rate, "epoch": self.epoch, "items": [_listify(k) for k in keys]}, [arr]

    def _load_state(self, meta, arrays) -> None:
        self.n, self.rate, self.epoch = meta["n"], meta["rate"], meta["epoch"]
        self.table = {_tuplify(k): int(c) for k, c in zip(meta["items"], arrays[0])}
