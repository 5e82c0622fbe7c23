"""Build a few synopses over a synthetic market feed and query them.

Run with ``python demos/quickstart.py``.
"""

from __future__ import annotations

from sde import bench
from sde.core import Scope, SynopsisSpec
from sde.engine import Engine

FEED = bench.GeneratorConfig(n_streams=50, duration_ms=600_000, seed=1)


def main() -> None:
    records = list(bench.generate(FEED))
    with Engine(workers=2, site_id="demo") as eng:
        # values are [symbol, level, price, volume]
        eng.build(SynopsisSpec("symbols", "HyperLogLog", "stocks", key_field=0, params={"m": 10}))
        eng.build(SynopsisSpec("ticks", "CountMin", "stocks", key_field=0,
                               params={"epsilon": 0.01, "delta": 0.01}, parallelism=2))
        eng.build(SynopsisSpec("median", "GKQuantiles", "stocks", key_field=2, params={"epsilon": 0.01},
                               scope=Scope.per_stream()))
        eng.ingest_many(records)
        eng.flush()

        print("records:", len(records))
        print("distinct symbols ~", round(eng.estimate("symbols")))
        stream = records[0].stream_id
        exact = sum(1 for r in records if r.values[0] == stream)
        print(f"records for {stream}: ~{eng.estimate('ticks', {'item': stream})} (exact {exact})")
        print(f"median price of {stream}:", eng.estimate("median", {"streamID": stream, "quantile": 0.5}))
        print("counters:", eng.status().counters)


if __name__ == "__main__":
    main()
