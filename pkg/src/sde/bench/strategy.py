"""Execution strategies and the result record shared by the benchmark workflows."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..core import ParameterError

# Columns of :meth:`StrategyResult.row`, in CSV order; workflow-specific
# extras follow them.
CSV_COLUMNS = ("workflow", "strategy", "n_streams", "workers", "tuples", "wall_s", "throughput",
               "pairs_compared", "pairs_emitted", "evaluations")


class Strategy(str, enum.Enum):
    NAIVE = "Naive"
    PARALLEL_ONLY = "ParallelOnly"
    SYNOPSIS_ONLY = "SynopsisOnly"
    SYNOPSIS_PLUS_PARALLEL = "SynopsisPlusParallel"

    @property
    def uses_synopsis(self) -> bool:
        return self in (Strategy.SYNOPSIS_ONLY, Strategy.SYNOPSIS_PLUS_PARALLEL)

    @property
    def parallel(self) -> bool:
        return self in (Strategy.PARALLEL_ONLY, Strategy.SYNOPSIS_PLUS_PARALLEL)


@dataclass
class StrategyResult:
    strategy: Strategy
    workflow: str
    n_streams: int
    workers: int
    tuples: int
    wall_s: float
    pairs_compared: int
    pairs_emitted: int
    evaluations: int
    extra: dict = field(default_factory=dict)
    emitted: frozenset = field(default=frozenset(), repr=False)

    @property
    def throughput(self) -> float:
        return self.tuples / self.wall_s if self.wall_s > 0 else float("inf")

    def row(self) -> dict:
        d = {"workflow": self.workflow, "strategy": self.strategy.value, "n_streams": self.n_streams,
             "workers": self.workers, "tuples": self.tuples, "wall_s": round(self.wall_s, 6),
             "throughput": round(self.throughput, 3), "pairs_compared": self.pairs_compared,
             "pairs_emitted": self.pairs_emitted, "evaluations": self.evaluations}
        assert tuple(d) == CSV_COLUMNS
        d.update(self.extra)
        return d


def check_workers(strategy: Strategy | str, workers: int) -> Strategy:
    """Single-worker strategies take exactly one worker; parallel ones at least one."""
    strategy = Strategy(strategy)
    if workers < 1:
        raise ParameterError("workers", "must be >= 1")
    if not strategy.parallel and workers != 1:
        raise ParameterError("workers", f"the {strategy.value} strategy runs on exactly one worker")
    return strategy
