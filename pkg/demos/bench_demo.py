"""Run the four correlation strategies on a small feed and print their rows.

Run with ``python demos/bench_demo.py``. The ``sde bench`` command runs the
same workflows at configurable sizes. At this size brute force is still
cheap, so Naive can beat the synopsis strategies; the synopsis pays off as
the number of streams grows.
"""

from __future__ import annotations

import sys

from sde import bench


def main() -> None:
    feed = bench.GeneratorConfig(n_streams=60, duration_ms=1_200_000, seed=2)
    cfg = bench.CorrelationConfig(feed, window=30, threshold=0.9)
    records = list(bench.generate(feed))
    truth = bench.brute_force_pairs(records, feed.tick_ms, 30, 0.9)
    rows = []
    for strategy, workers in (("Naive", 1), ("SynopsisOnly", 1), ("ParallelOnly", 2), ("SynopsisPlusParallel", 2)):
        res = bench.run_workflow(strategy, cfg, workers, records)
        assert res.emitted == truth
        rows.append(res.row())
    bench.write_rows(rows, sys.stdout)


if __name__ == "__main__":
    main()
