"""Greenwald-Khanna quantile summary.

The summary is a value-sorted list of tuples ``(v, g, delta)``. ``g`` is the
gap between the minimum possible rank of ``v`` and that of its predecessor,
and ``delta`` bounds the extra rank uncertainty, so
``rmin(v_i) = sum_{j <= i} g_j`` and ``rmax(v_i) = rmin(v_i) + delta_i``.
The invariant ``g_i + delta_i <= 2 epsilon n`` keeps every answer within
``epsilon n`` ranks of the requested one.

Merging two summaries combines their rank bounds element-wise (each value's
``rmin`` gains the ``rmin`` of its predecessor on the other side; ``rmax``
gains the ``rmax`` of its successor minus one) and then compresses, so the
merged error stays within ``max(eps_a, eps_b) * (n_a + n_b)``.
"""

from __future__ import annotations

import bisect
import math

import numpy as np

from ..core import ProtocolError, number, pick
from .base import Synopsis, check_query, require


class GKQuantiles(Synopsis):
    kind = "GKQuantiles"

    @classmethod
    def validate_params(cls, params):
        params["epsilon"] = require(params, "epsilon", low=0, high=1)
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.eps = self.params["epsilon"]
        self.period = max(1, math.floor(1.0 / (2.0 * self.eps)))
        self.n = 0
        self.vs: list[float] = []
        self.gs: list[int] = []
        self.ds: list[int] = []

    def extract(self, record, key_field, value_fields):
        field = value_fields[0] if value_fields else key_field
        return (number(pick(record.values, field), "quantile value"),)

    def add(self, value) -> None:
        v = number(value, "quantile value")
        i = bisect.bisect_right(self.vs, v)
        if i == 0 or i == len(self.vs):
            d = 0
        else:
            d = self.gs[i] + self.ds[i] - 1
        self.vs.insert(i, v)
        self.gs.insert(i, 1)
        self.ds.insert(i, d)
        self.n += 1
        self.items_seen += 1
        if self.n % self.period == 0:
            self.compress()

    def compress(self) -> None:
        cap = math.floor(2.0 * self.eps * self.n)
        vs, gs, ds = self.vs, self.gs, self.ds
        # Fold tuple i into i + 1, right to left; the minimum stays exact.
        i = len(vs) - 2
        while i >= 1:
            if gs[i] + gs[i + 1] + ds[i + 1] <= cap:
                gs[i + 1] += gs[i]
                del vs[i], gs[i], ds[i]
            i -= 1

    def _bounds(self) -> tuple[np.ndarray, np.ndarray]:
        rmin = np.cumsum(np.asarray(self.gs, dtype=np.int64))
        return rmin, rmin + np.asarray(self.ds, dtype=np.int64)

    def query_rank(self, r: int) -> float | None:
        """A value whose true rank is within ``epsilon n`` of ``r`` (1-based)."""
        if self.n == 0:
            return None
        r = min(max(int(r), 1), self.n)
        rmin, rmax = self._bounds()
        err = np.maximum(r - rmin, rmax - r)
        return self.vs[int(np.argmin(err))]

    def quantile(self, phi: float) -> float | None:
        return self.query_rank(math.ceil(phi * self.n))

    def estimate(self, query=None):
        q = check_query(self.kind, query, "quantile", "quantiles", "rank")
        if "rank" in q:
            return self.query_rank(int(number(q["rank"], "rank")))
        if "quantiles" in q:
            return [self.quantile(self._phi(p)) for p in q["quantiles"]]
        return self.quantile(self._phi(q.get("quantile", 0.5)))

    @staticmethod
    def _phi(p) -> float:
        p = number(p, "quantile")
        if not 0.0 <= p <= 1.0:
            raise ProtocolError("schema_error", f"quantile must be in [0, 1], got {p}", field="quantile")
        return p

    def _merge_into(self, out, other) -> None:
        a_rmin, a_rmax = self._bounds()
        b_rmin, b_rmax = other._bounds()
        av, bv = self.vs, other.vs
        merged = []
        # Ties: tuples of self sort before equal tuples of other.
        for i, v in enumerate(av):
            p = bisect.bisect_left(bv, v)           # other's tuples strictly before v
            lo = int(b_rmin[p - 1]) if p > 0 else 0
            hi = int(b_rmax[p]) - 1 if p < len(bv) else other.n
            merged.append((v, 0, int(a_rmin[i]) + lo, int(a_rmax[i]) + hi))
        for i, v in enumerate(bv):
            p = bisect.bisect_right(av, v)          # self's tuples at or before v
            lo = int(a_rmin[p - 1]) if p > 0 else 0
            hi = int(a_rmax[p]) - 1 if p < len(av) else self.n
            merged.append((v, 1, int(b_rmin[i]) + lo, int(b_rmax[i]) + hi))
        merged.sort(key=lambda t: (t[0], t[1]))
        vs, gs, ds = [], [], []
        prev = 0
        for v, _, rmin, rmax in merged:
            vs.append(v)
            gs.append(rmin - prev)
            ds.append(rmax - rmin)
            prev = rmin
        out.vs, out.gs, out.ds = vs, gs, ds
        out.n = self.n + other.n
        out.compress()

    def _state(self):
        return {"n": self.n}, [np.asarray(self.vs, dtype=np.float64),
                               np.asarray(self.gs, dtype=np.int64), np.asarray(self.ds, dtype=np.int64)]

    def _load_state(self, meta, arrays) -> None:
        self.n = meta["n"]
        self.vs = [float(v) for v in arrays[0]]
        self.gs = [int(g) for g in arrays[1]]
        self.ds = [int(d) for d in arrays[2]]
