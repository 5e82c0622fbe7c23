"""StreamKM++-style coreset maintenance with a coreset tree and merge-and-reduce.

Points of dimensionality ``d`` are collected in buckets of ``m`` weighted
points. Bucket ``0`` fills from the stream; a full bucket carries into level
1, and two buckets meeting at a level are reduced to ``m`` points and carried
up, like binary addition. A reduction runs the coreset tree: it picks ``m``
representatives by D^2 sampling (the first uniformly by weight, each next one
from a leaf chosen in proportion to the leaf's cost, then a point of that
leaf in proportion to its cost), splitting the leaf between its old and new
representative each time. Every representative finally carries the weight of
the points in its leaf.

The estimate is the union of all buckets, reduced once more if it holds more
than ``m`` points, so it never exceeds the bucket size.
"""

from __future__ import annotations

import numpy as np

from ..core import RecordError, number, pick
from .base import Synopsis, check_query, require
from .values import WeightedPoints


def _sq_dist(points: np.ndarray, centre: np.ndarray) -> np.ndarray:
    diff = points - centre
    return np.einsum("ij,ij->i", diff, diff)


def coreset_tree_reduce(points: np.ndarray, weights: np.ndarray, m: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Reduce a weighted point set to at most ``m`` weighted representatives."""
    n = len(points)
    if n <= m:
        return points.copy(), weights.copy()
    first = int(rng.choice(n, p=weights / weights.sum()))
    reps = [first]
    owner = np.zeros(n, dtype=np.int64)                  # leaf id per point
    cost = weights * _sq_dist(points, points[first])     # weighted D^2 to own rep
    leaf_cost = [float(cost.sum())]
    while len(reps) < m:
        total = float(sum(leaf_cost))
        if total <= 0.0:
            break
        leaf = int(rng.choice(len(leaf_cost), p=np.asarray(leaf_cost) / total))
        members = np.flatnonzero(owner == leaf)
        local = cost[members]
        pick_i = int(members[rng.choice(len(members), p=local / local.sum())])
        new_leaf = len(reps)
        reps.append(pick_i)
        # Split the leaf between its representative and the new one.
        d_new = weights[members] * _sq_dist(points[members], points[pick_i])
        moved = d_new < local
        owner[members[moved]] = new_leaf
        cost[members[moved]] = d_new[moved]
        leaf_cost[leaf] = float(cost[members[~moved]].sum())
        leaf_cost.append(float(cost[members[moved]].sum()))
    out_w = np.bincount(owner, weights=weights, minlength=len(reps))
    return points[reps].copy(), out_w


class CoreSetTree(Synopsis):
    kind = "CoreSetTree"

    @classmethod
    def validate_params(cls, params):
        params["bucket_size"] = require(params, "bucket_size", int, low=1, low_open=False)
        params["dimensionality"] = require(params, "dimensionality", int, low=1, low_open=False)
        return params

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.m = self.params["bucket_size"]
        self.d = self.params["dimensionality"]
        self.reductions = 0
        self.buf_points: list[np.ndarray] = []
        self.buf_weights: list[float] = []
        # levels[i] is None or a (points, weights) pair of exactly m points.
        self.levels: list[tuple[np.ndarray, np.ndarray] | None] = []

    def extract(self, record, key_field, value_fields):
        if len(value_fields) != self.d:
            raise RecordError(f"CoreSetTree needs {self.d} value fields, got {len(value_fields)}")
        return (tuple(number(pick(record.values, i), "coordinate") for i in value_fields),)

    def _rng(self) -> np.random.Generator:
        self.reductions += 1
        return np.random.default_rng([self.seeds[0] & 0xFFFFFFFFFFFFFFFF, self.reductions])

    def add(self, point, weight: float = 1.0) -> None:
        p = np.asarray(point, dtype=np.float64).reshape(-1)
        if p.shape[0] != self.d:
            raise RecordError(f"point has {p.shape[0]} coordinates, expected {self.d}")
        if not np.all(np.isfinite(p)):
            raise RecordError("point coordinates must be finite")
        self.buf_points.append(p)
        self.buf_weights.append(float(weight))
        self.items_seen += 1
        if len(self.buf_points) == self.m:
            bucket = (np.array(self.buf_points), np.array(self.buf_weights))
            self.buf_points, self.buf_weights = [], []
            self._carry(bucket, 1)

    def _carry(self, bucket, level: int) -> None:
        idx = level - 1
        while True:
            while len(self.levels) <= idx:
                self.levels.append(None)
            if self.levels[idx] is None:
                self.levels[idx] = bucket
                return
            held = self.levels[idx]
            self.levels[idx] = None
            pts = np.vstack([held[0], bucket[0]])
            ws = np.concatenate([held[1], bucket[1]])
            bucket = coreset_tree_reduce(pts, ws, self.m, self._rng())
            idx += 1

    def _union(self) -> tuple[np.ndarray, np.ndarray]:
        pts = [b[0] for b in self.levels if b is not None]
        ws = [b[1] for b in self.levels if b is not None]
        if self.buf_points:
            pts.append(np.array(self.buf_points))
            ws.append(np.array(self.buf_weights))
        if not pts:
            return np.zeros((0, self.d)), np.zeros(0)
        return np.vstack(pts), np.concatenate(ws)

    def coreset(self) -> WeightedPoints:
        pts, ws = self._union()
        if len(ws) > self.m:
            # Deterministic for a given state: the draw does not advance the counter.
            rng = np.random.default_rng([self.seeds[0] & 0xFFFFFFFFFFFFFFFF, self.reductions, 1])
            pts, ws = coreset_tree_reduce(pts, ws, self.m, rng)
        return WeightedPoints(pts, ws)

    def estimate(self, query=None) -> WeightedPoints:
        check_query(self.kind, query)
        return self.coreset()

    def _merge_into(self, out, other) -> None:
        out.reductions = max(self.reductions, other.reductions)
        for level, bucket in enumerate(other.levels, start=1):
            if bucket is not None:
                out._carry((bucket[0].copy(), bucket[1].copy()), level)
        for p, w in zip(other.buf_points, other.buf_weights):
            out.buf_points.append(p.copy())
            out.buf_weights.append(w)
            if len(out.buf_points) == out.m:
                bucket = (np.array(out.buf_points), np.array(out.buf_weights))
                out.buf_points, out.buf_weights = [], []
                out._carry(bucket, 1)

    def _state(self):
        present = [b is not None for b in self.levels]
        arrays = [np.array(self.buf_points, dtype=np.float64).reshape(-1, self.d),
                  np.array(self.buf_weights, dtype=np.float64)]
        for b in self.levels:
            if b is not None:
                arrays.extend([b[0], b[1]])
        return {"reductions": self.reductions, "levels": present}, arrays

    def _load_state(self, meta, arrays) -> None:
        self.reductions = meta["reductions"]
        self.buf_points = [row.copy() for row in arrays[0]]
        self.buf_weights = [float(w) for w in arrays[1]]
        self.levels, k = [], 2
        for present in meta["levels"]:
            if present:
                self.levels.append((arrays[k], arrays[k + 1]))
                k += 2
            else:
                self.levels.append(None)

