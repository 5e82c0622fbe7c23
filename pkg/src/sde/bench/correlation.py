"""The pairwise-correlation workflow under four execution strategies.

After every closed tick, once each stock's window holds ``window`` joined
prices, the workflow reports every pair of stocks whose Pearson correlation
over the window is at least ``threshold``.

* Naive: one thread, exact windows, all C(n, 2) pairs checked.
* ParallelOnly: exact windows, all pairs checked, row blocks spread over a
  process pool.
* SynopsisOnly: a DFT synopsis (one shard) replaces the window; only pairs in
  the same or adjacent grid cells are checked exactly.
* SynopsisPlusParallel: the DFT synopsis is sharded over ``workers`` engine
  workers and the candidate checks run on the process pool.

Every strategy checks pairs with the same kernel (:func:`pearson_pairs`), so
their costs differ only in how many pairs they check and in the machinery
around it. Candidate pairs are verified exactly against the raw window,
which makes the emitted set identical to brute force.
"""

from __future__ import annotations

import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import shared_memory
from typing import Iterable, Sequence

import numpy as np

from ..core import ParameterError, SynopsisSpec, StreamRecord, WindowMode, WindowSpec
from ..engine import Engine
from ..protocol import Request, Verb
from .generator import GeneratorConfig, generate
from .stages import Joined, joined_ticks
from .strategy import Strategy, StrategyResult, check_workers

DATASET = "joined"
_CHUNK_PAIRS = 1 << 16


@dataclass(frozen=True)
class CorrelationConfig:
    generator: GeneratorConfig
    window: int = 60
    threshold: float = 0.9
    coefficients: int = 8

    def __post_init__(self) -> None:
        if self.window < 3:
            raise ParameterError("window", "must be >= 3")
        if not 0 < self.threshold < 1:
            raise ParameterError("threshold", "must be in (0, 1)")


# ---------------------------------------------------------------------------
# Pair kernel


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows centred and scaled to unit norm; the mask marks rows with variance."""
    z = x - x.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.einsum("ij,ij->i", z, z))
    ok = norm > 1e-12 * np.maximum(1.0, np.abs(x).max(axis=1))
    z[ok] /= norm[ok, None]
    return z, ok


def pearson_pairs(z: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    """Pearson correlation of row pairs of a row-normalized matrix."""
    out = np.empty(len(ia), dtype=np.float64)
    for lo in range(0, len(ia), _CHUNK_PAIRS):
        hi = lo + _CHUNK_PAIRS
        out[lo:hi] = np.einsum("ij,ij->i", z[ia[lo:hi]], z[ib[lo:hi]])
    return out


def all_pairs(rows: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (i, j), i in ``rows``, j > i, j < n."""
    ia = np.repeat(rows, n - 1 - rows)
    starts = np.repeat(np.cumsum(n - 1 - rows) - (n - 1 - rows), n - 1 - rows)
    ib = np.arange(len(ia)) - starts + np.repeat(rows + 1, n - 1 - rows)
    return ia.astype(np.int64), ib.astype(np.int64)


def above(z: np.ndarray, ok: np.ndarray, ia: np.ndarray, ib: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    keep = ok[ia] & ok[ib]
    ia, ib = ia[keep], ib[keep]
    r = pearson_pairs(z, ia, ib)
    hit = r >= t
    return ia[hit], ib[hit]


# Process-pool side: the matrix travels through shared memory.

_shm: shared_memory.SharedMemory | None = None


def _attach(name: str) -> None:
    global _shm
    _shm = shared_memory.SharedMemory(name=name)


def _view(shape: tuple[int, int]) -> np.ndarray:
    return np.ndarray(shape, dtype=np.float64, buffer=_shm.buf)


def _task_rows(shape, ok, rows, t):
    z = _view(shape)
    ia, ib = all_pairs(np.asarray(rows, dtype=np.int64), shape[0])
    return above(z, ok, ia, ib, t)


def _task_pairs(shape, ok, ia, ib, t):
    return above(_view(shape), ok, ia, ib, t)


class PairPool:
    """A process pool that checks pairs of a shared, row-normalized matrix.

    Work is split into at most ``workers`` tasks of at least ``min_task_pairs``
    pairs each; a batch too small for two tasks runs inline, since shipping it
    to another process costs more than checking it.
    """

    def __init__(self, workers: int, max_rows: int, width: int, min_task_pairs: int = 20_000) -> None:
        self.workers = workers
        self.min_task_pairs = min_task_pairs
        self.shm = shared_memory.SharedMemory(create=True, size=max(8, max_rows * width * 8))
        self.pool = ProcessPoolExecutor(workers, initializer=_attach, initargs=(self.shm.name,))
        self.width = width

    def tasks_for(self, n_pairs: int) -> int:
        return max(1, min(self.workers, n_pairs // max(1, self.min_task_pairs)))

    def load(self, z: np.ndarray) -> tuple[int, int]:
        np.ndarray(z.shape, dtype=np.float64, buffer=self.shm.buf)[:] = z
        return z.shape

    def all_pairs(self, z: np.ndarray, ok: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        n = len(z)
        tasks = self.tasks_for(n * (n - 1) // 2)
        if tasks == 1:
            return above(z, ok, *all_pairs(np.arange(n), n), t)
        shape = self.load(z)
        # Interleave rows so every task gets a similar number of pairs.
        blocks = [np.arange(w, n, tasks) for w in range(tasks)]
        futs = [self.pool.submit(_task_rows, shape, ok, b, t) for b in blocks if len(b)]
        return _concat([f.result() for f in futs])

    def pairs(self, z: np.ndarray, ok: np.ndarray, ia: np.ndarray, ib: np.ndarray,
              t: float) -> tuple[np.ndarray, np.ndarray]:
        tasks = self.tasks_for(len(ia))
        if tasks == 1:
            return above(z, ok, ia, ib, t)
        shape = self.load(z)
        parts = np.array_split(np.arange(len(ia)), tasks)
        futs = [self.pool.submit(_task_pairs, shape, ok, ia[p], ib[p], t) for p in parts if len(p)]
        return _concat([f.result() for f in futs])

    def close(self) -> None:
        self.pool.shutdown()
        self.shm.close()
        self.shm.unlink()


def _concat(parts: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    if not parts:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ---------------------------------------------------------------------------
# Brute force


def brute_force_pairs(records: Iterable[StreamRecord], tick_ms: int, window: int, threshold: float,
                      start_ms: int = 0) -> frozenset:
    """Reference answer: (tick, a, b) for every above-threshold pair, via ``np.corrcoef``."""
    windows: dict[str, deque] = {}
    out = set()
    for tick in joined_ticks(records, tick_ms, start_ms):
        for j in tick:
            windows.setdefault(j.symbol, deque(maxlen=window)).append(j.price)
        names = sorted(s for s, w in windows.items() if len(w) == window)
        if len(names) < 2:
            continue
        x = np.array([windows[s] for s in names])
        flat = x.std(axis=1) == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.corrcoef(x)
        iu, ju = np.triu_indices(len(names), 1)
        hit = (c[iu, ju] >= threshold) & ~flat[iu] & ~flat[ju]
        out.update((tick[0].tick, names[a], names[b]) for a, b in zip(iu[hit], ju[hit]))
    return frozenset(out)


# ---------------------------------------------------------------------------
# Strategies


class _Windows:
    """Exact per-stock windows kept as a ring matrix."""

    def __init__(self, window: int) -> None:
        self.window = window
        self.index: dict[str, int] = {}
        self.names: list[str] = []
        self.buf = np.zeros((0, window))
        self.count = np.zeros(0, dtype=np.int64)
        self.head = 0

    def push_tick(self, tuples: Sequence[Joined]) -> None:
        for j in tuples:
            if j.symbol not in self.index:
                self.index[j.symbol] = len(self.names)
                self.names.append(j.symbol)
        n = len(self.names)
        if n > len(self.buf):
            self.buf = np.vstack([self.buf, np.zeros((n - len(self.buf), self.window))])
            self.count = np.concatenate([self.count, np.zeros(n - len(self.count), dtype=np.int64)])
        rows = np.fromiter((self.index[j.symbol] for j in tuples), dtype=np.int64, count=len(tuples))
        vals = np.fromiter((j.price for j in tuples), dtype=np.float64, count=len(tuples))
        # Every stock that has traded appears in every tick, so one shared head suffices.
        self.buf[rows, self.count[rows] % self.window] = vals
        self.count[rows] += 1

    def full_matrix(self) -> tuple[list[str], np.ndarray]:
        rows = np.flatnonzero(self.count >= self.window)
        names = sorted(self.names[r] for r in rows)
        order = np.array([self.index[s] for s in names], dtype=np.int64)
        if not len(order):
            return [], np.zeros((0, self.window))
        # Oldest-first order does not change correlations, but keep it tidy.
        shift = self.count[order] % self.window
        idx = (np.arange(self.window)[None, :] + shift[:, None]) % self.window
        return names, np.take_along_axis(self.buf[order], idx, axis=1)


def _emit(tick: int, names: Sequence[str], ia: np.ndarray, ib: np.ndarray) -> set:
    out = set()
    for a, b in zip(ia.tolist(), ib.tolist()):
        x, y = names[a], names[b]
        out.add((tick, x, y) if x < y else (tick, y, x))
    return out


def run_workflow(strategy: Strategy | str, config: CorrelationConfig, workers: int = 1,
                 records: Sequence[StreamRecord] | None = None) -> StrategyResult:
    """Run the correlation workflow; ``records`` defaults to the generator output."""
    strategy = check_workers(strategy, workers)
    gen = config.generator
    if records is None:
        records = list(generate(gen))
    n_max = gen.n_streams
    t = config.threshold
    windows = _Windows(config.window)
    pool = PairPool(workers, n_max, config.window) if strategy.parallel else None
    engine = None
    if strategy.uses_synopsis:
        shards = workers if strategy is Strategy.SYNOPSIS_PLUS_PARALLEL else 1
        engine = Engine(workers=shards, site_id="bench")
        spec = SynopsisSpec(
            "corr", "DFT", DATASET, key_field=0, value_fields=(1,),
            params={"threshold": t, "coefficients": config.coefficients, "seed": gen.seed},
            parallelism=shards, window=WindowSpec(WindowMode.COUNT_SLIDING, config.window, 1),
        )
        engine.build(spec)
    emitted: set = set()
    compared = 0
    evaluations = 0
    qn = 0
    t0 = time.perf_counter()
    try:
        for tick in joined_ticks(records, gen.tick_ms, gen.start_ms):
            windows.push_tick(tick)
            tick_no = tick[0].tick
            if engine is not None:
                engine.ingest_many([StreamRecord(DATASET, j.symbol, tick_no, (j.symbol, j.price)) for j in tick])
            names, x = windows.full_matrix()
            if len(names) < 2:
                continue
            evaluations += 1
            z, ok = normalize_rows(x)
            if engine is None:
                n = len(names)
                compared += n * (n - 1) // 2
                if pool is None:
                    ia, ib = above(z, ok, *all_pairs(np.arange(n), n), t)
                else:
                    ia, ib = pool.all_pairs(z, ok, t)
            else:
                qn += 1
                resp = engine.handle(Request(f"c{qn}", Verb.ADHOC_QUERY, "corr", query={"similar": True}),
                                     publish=False)
                if not resp.ok:
                    raise RuntimeError(f"candidate query failed: {resp.error}")
                pos = {s: i for i, s in enumerate(names)}
                # Candidates were compared in feature space; exact checks are a subset.
                compared += resp.value["checked"]
                cand = [(pos[a], pos[b]) for a, b in resp.value["pairs"] if a in pos and b in pos]
                if not cand:
                    continue
                ca = np.array([c[0] for c in cand], dtype=np.int64)
                cb = np.array([c[1] for c in cand], dtype=np.int64)
                ia, ib = above(z, ok, ca, cb, t) if pool is None else pool.pairs(z, ok, ca, cb, t)
            emitted |= _emit(tick_no, names, ia, ib)
        wall = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.close()
        if engine is not None:
            engine.close()
    return StrategyResult(strategy, "correlation", gen.n_streams, workers, len(records), wall, compared,
                          len(emitted), evaluations, emitted=frozenset(emitted))
