"""Chain sampling: a uniform sample (with replacement) over a count window.

The sampler keeps ``k`` independent chains. Element ``i`` (1-based) becomes
the head candidate of a chain with probability ``1 / min(i, n)``; when it is
chosen, a successor index is drawn uniformly from ``[i + 1, i + n]`` and the
element arriving at that index is appended to the chain, drawing its own
successor in turn. When the head falls out of the window the next chain
element takes over, and it is always inside the window. Each chain head is
therefore a uniform draw from the last ``min(i, n)`` elements. ``n = 0``
means an unbounded window (plain reservoir sampling per chain).

Coin flips are counter-based draws on ``(chain seed, element index)``, so the
state holds no generator and serializes exactly.
"""

from __future__ import annotations

import numpy as np

from ..hashing import derive_seeds, uniform
from .base import Synopsis, _listify, _tuplify, check_query, require


class ChainSampler(Synopsis):
    kind = "ChainSampler"
    window_native = True

    @classmethod
    def validate_params(cls, params):
        params["size"] = require(params, "size", int, low=1, low_open=False)
        params["window"] = require(params, "window", int, low=0, low_open=False, default=0)
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.k = self.params["size"]
        self.n_window = self.params["window"]
        seeds = derive_seeds(self.seeds[0], 2 * self.k + 1)
        self._pick_seeds = seeds[0:2 * self.k:2]
        self._next_seeds = seeds[1:2 * self.k:2]
        self._merge_seed = seeds[-1]
        self.i = 0
        # Per chain: list of [index, item]; the successor index to wait for (0 = none).
        self.chains: list[list[list]] = [[] for _ in range(self.k)]
        self.waiting: list[int] = [0] * self.k

    def _successor(self, j: int, i: int) -> int:
        return i + 1 + min(int(uniform(self._next_seeds[j], i) * self.n_window), self.n_window - 1)

    def add(self, item) -> None:
        self.i += 1
        i, n = self.i, self.n_window
        span = min(i, n) if n else i
        for j in range(self.k):
            chain = self.chains[j]
            if uniform(self._pick_seeds[j], i) * span < 1.0:
                chain.clear()
                chain.append([i, item])
                self.waiting[j] = self._successor(j, i) if n else 0
            elif n and self.waiting[j] == i:
                chain.append([i, item])
                self.waiting[j] = self._successor(j, i)
            if n:
                while chain and chain[0][0] <= i - n:
                    chain.pop(0)
        self.items_seen += 1

    @property
    def active(self) -> int:
        """Number of elements in the current window."""
        return min(self.i, self.n_window) if self.n_window else self.i

    def sample(self) -> list:
        return [c[0][1] for c in self.chains if c]

    def estimate(self, query=None) -> list:
        check_query(self.kind, query)
        return self.sample()

    def _merge_into(self, out, other) -> None:
        # Keep each chain from one side, chosen in proportion to the window sizes,
        # so every head stays uniform over the union of both windows.
        wa, wb = self.active, other.active
        total = wa + wb
        chains, waiting = [], []
        for j in range(self.k):
            take_other = total > 0 and uniform(self._merge_seed ^ j, total) * total >= wa
            src = other if take_other else self
            chains.append([list(e) for e in src.chains[j]])
            waiting.append(src.waiting[j])
        out.chains, out.waiting = chains, waiting
        out.i = self.i + other.i

    def _state(self):
        lengths = np.array([len(c) for c in self.chains], dtype=np.int64)
        idx = np.array([e[0] for c in self.chains for e in c], dtype=np.int64)
        items = [_listify(e[1]) for c in self.chains for e in c]
        return {"i": self.i, "items": items}, [lengths, idx, np.array(self.waiting, dtype=np.int64)]

    def _load_state(self, meta, arrays) -> None:
        lengths, idx, waiting = arrays
        self.i = meta["i"]
        items = [_tuplify(v) for v in meta["items"]]
        self.chains, pos = [], 0
        for length in lengths:
            self.chains.append([[int(idx[p]), items[p]] for p in range(pos, pos + int(length))])
            pos += int(length)
        self.waiting = [int(w) for w in waiting]

