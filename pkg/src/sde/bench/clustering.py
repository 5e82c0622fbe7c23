"""The stream-mining version of the workflow: k-means over the joined stream.

Every joined tuple becomes a point ``(log1p(volume), bids)``. After every
``eval_every`` closed ticks the workflow recomputes ``k`` centres over all
points seen so far.

* Naive: one thread keeps every point and runs k-means on all of them.
* ParallelOnly: points are partitioned by stock over a process pool; each
  partition is clustered locally and the weighted local centres are
  clustered once more (divide and conquer).
* SynopsisOnly: a CoreSetTree synopsis (one shard) keeps a coreset of at
  most ``bucket_size`` weighted points; weighted k-means runs on it.
* SynopsisPlusParallel: the CoreSetTree is sharded over ``workers`` engine
  workers and the shards' coresets are merged by the engine.

The reported cost ratio compares the final centres of the strategy with a
full k-means solution, both measured on all points.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from ..core import ParameterError, SynopsisSpec, StreamRecord, stable_hash
from ..engine import Engine
from ..protocol import Request, Verb
from .generator import GeneratorConfig, generate
from .stages import Joined, joined_ticks
from .strategy import Strategy, StrategyResult, check_workers

DATASET = "points"


@dataclass(frozen=True)
class ClusteringConfig:
    generator: GeneratorConfig
    k: int = 4
    bucket_size: int = 10
    eval_every: int = 1
    n_init: int = 3

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ParameterError("k", "must be >= 1")
        if self.k > self.generator.n_streams:
            raise ParameterError("k", f"k={self.k} exceeds n_streams={self.generator.n_streams}")
        if self.bucket_size < self.k:
            raise ParameterError("bucket_size", "must be >= k")
        if self.eval_every < 1 or self.n_init < 1:
            raise ParameterError("eval_every", "eval_every and n_init must be >= 1")


def point_of(j: Joined) -> tuple[float, float]:
    return (math.log1p(j.volume), float(j.bids))


def kmeans(points: np.ndarray, k: int, weights: np.ndarray | None = None, seed: int = 0,
           n_init: int = 3) -> np.ndarray:
    """Centres of (weighted) k-means; fewer distinct points than k yields those points."""
    distinct = np.unique(points, axis=0)
    if len(distinct) <= k:
        return distinct
    with warnings.catch_warnings():
        # Duplicate points can leave sklearn with fewer distinct clusters than k.
        warnings.simplefilter("ignore")
        km = KMeans(n_clusters=k, n_init=n_init, random_state=seed).fit(points, sample_weight=weights)
    return km.cluster_centers_


def kmeans_cost(points: np.ndarray, centres: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Sum of (weighted) squared distances to the nearest centre."""
    d2 = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return float(d2.sum() if weights is None else d2 @ weights)


def _local_centres(points: np.ndarray, k: int, seed: int, n_init: int) -> tuple[np.ndarray, np.ndarray]:
    centres = kmeans(points, k, seed=seed, n_init=n_init)
    d2 = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    return centres, np.bincount(d2.argmin(axis=1), minlength=len(centres)).astype(np.float64)


class _Partitions:
    """Per-worker point lists; a stock always lands in the same partition."""

    def __init__(self, workers: int) -> None:
        self.workers = workers
        self.parts: list[list[tuple[float, float]]] = [[] for _ in range(workers)]
        self.owner: dict[str, int] = {}

    def add(self, symbol: str, point: tuple[float, float]) -> None:
        w = self.owner.get(symbol)
        if w is None:
            w = self.owner[symbol] = stable_hash(symbol) % self.workers
        self.parts[w].append(point)


def run_clustering_workflow(strategy: Strategy | str, config: ClusteringConfig, workers: int = 1,
                            records: Sequence[StreamRecord] | None = None) -> StrategyResult:
    """Run the clustering workflow; ``records`` defaults to the generator output."""
    strategy = check_workers(strategy, workers)
    gen = config.generator
    if records is None:
        records = list(generate(gen))
    k, seed = config.k, gen.seed
    points: list[tuple[float, float]] = []          # exact points, for Naive and the final cost
    parts = _Partitions(workers) if strategy is Strategy.PARALLEL_ONLY else None
    pool = ProcessPoolExecutor(workers) if parts is not None else None
    engine = None
    if strategy.uses_synopsis:
        shards = workers if strategy is Strategy.SYNOPSIS_PLUS_PARALLEL else 1
        engine = Engine(workers=shards, site_id="bench")
        engine.build(SynopsisSpec(
            "coreset", "CoreSetTree", DATASET, key_field=0,
            value_fields=(1, 2), parallelism=shards,
            params={"bucket_size": config.bucket_size, "dimensionality": 2, "seed": seed},
        ))
    centres = np.zeros((0, 2))
    compared = evaluations = ticks = qn = 0
    t0 = time.perf_counter()
    try:
        for tick in joined_ticks(records, gen.tick_ms, gen.start_ms):
            pts = [point_of(j) for j in tick]
            points.extend(pts)
            if parts is not None:
                for j, p in zip(tick, pts):
                    parts.add(j.symbol, p)
            if engine is not None:
                engine.ingest_many([StreamRecord(DATASET, j.symbol, j.tick, (j.symbol, *p))
                                    for j, p in zip(tick, pts)])
            ticks += 1
            if ticks % config.eval_every:
                continue
            evaluations += 1
            if strategy is Strategy.NAIVE:
                x = np.asarray(points)
                compared += len(x)
                centres = kmeans(x, k, seed=seed, n_init=config.n_init)
            elif parts is not None:
                arrays = [np.asarray(p) for p in parts.parts if p]
                compared += sum(len(a) for a in arrays)
                futs = [pool.submit(_local_centres, a, k, seed, config.n_init) for a in arrays]
                local = [f.result() for f in futs]
                cs = np.vstack([c for c, _ in local])
                ws = np.concatenate([w for _, w in local])
                centres = kmeans(cs, k, ws, seed=seed, n_init=config.n_init)
            else:
                qn += 1
                resp = engine.handle(Request(f"k{qn}", Verb.ADHOC_QUERY, "coreset"), publish=False)
                if not resp.ok:
                    raise RuntimeError(f"coreset query failed: {resp.error}")
                core = resp.value
                compared += len(core.weights)
                centres = kmeans(core.points, k, core.weights, seed=seed, n_init=config.n_init)
        wall = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.shutdown()
        if engine is not None:
            engine.close()
    extra = {"k": k, "bucket_size": config.bucket_size, "cost_ratio": ""}
    if points and len(centres):
        x = np.asarray(points)
        reference = kmeans(x, k, seed=seed, n_init=10)
        extra["cost_ratio"] = round(kmeans_cost(x, centres) / max(kmeans_cost(x, reference), 1e-12), 6)
    return StrategyResult(strategy, "clustering", gen.n_streams, workers, len(records), wall, compared,
                          len(centres), evaluations, extra=extra)
