"""Communication cost of federated synopses versus shipping raw tuples.

The generator feed is split over ``n`` simulated sites by stock (every stock
lives on one site). Each site maintains the same three federated synopses:
a CountMin over trade prices, a HyperLogLog over trade prices and a DFT over
the per-stock price series. Every ``period_ms`` of event time the
responsible site runs an ad-hoc query on each of them, which pulls one
state frame from every other site. The ledger records the frame bytes
actually written and, next to them, the encoded bytes of the raw tuples that
the frame replaces.
"""

from __future__ import annotations

import time
from typing import Iterable, Sequence

from ..core import FederationSpec, SynopsisSpec, StreamRecord, WindowMode, WindowSpec, stable_hash
from ..federation import FederationHarness, SimClock
from ..protocol import Request, Verb
from .generator import GeneratorConfig, generate

DATASET = "stocks"
PRICE = 2
ROUND_QUERIES = {"fed-cm": {"item": 0.0}, "fed-hll": None, "fed-dft": {"candidates": True}}


def federated_specs(responsible: str, window: int = 60, seed: int = 0) -> list[SynopsisSpec]:
    fed = FederationSpec(responsible)
    return [
        SynopsisSpec("fed-cm", "CountMin", DATASET, key_field=PRICE, params={"epsilon": 0.01, "delta": 0.01,
                     "seed": seed}, federation=fed),
        SynopsisSpec("fed-hll", "HyperLogLog", DATASET, key_field=PRICE, params={"m": 10, "seed": seed},
                     federation=fed),
        SynopsisSpec("fed-dft", "DFT", DATASET, key_field=0, value_fields=(PRICE,),
                     params={"threshold": 0.9, "coefficients": 8, "window": window, "seed": seed},
                     window=WindowSpec(WindowMode.COUNT_SLIDING, window, 1), federation=fed),
    ]


def site_of(stream_id: str, n_sites: int) -> int:
    return stable_hash(stream_id) % n_sites


def run_federation_savings(site_counts: Iterable[int] = (2, 4, 6, 8, 10), generator: GeneratorConfig | None = None,
                           period_ms: int = 300_000, workers: int = 1) -> list[dict]:
    """One row per site count with the ledger totals and the actual/raw ratio.

    Raw bytes are counted per synopsis, as each one alone would otherwise
    have shipped its input. ``worst_link_ratio`` is the largest ratio over
    (synopsis, origin, destination) links, so a row passes an
    order-of-magnitude check only if every link does.
    """
    gen = generator or GeneratorConfig(n_streams=500, duration_ms=600_000)
    records = list(generate(gen))
    return [_run(n, records, gen, period_ms, workers) for n in site_counts]


def _run(n: int, records: Sequence[StreamRecord], gen: GeneratorConfig, period_ms: int, workers: int) -> dict:
    t0 = time.perf_counter()
    with FederationHarness(n, workers=workers) as h:
        responsible = h.site_ids[0]
        specs = federated_specs(responsible, seed=gen.seed)
        for spec in specs:
            h.build(spec)
        clock = SimClock(gen.start_ms)
        rounds = 0
        failures: list[str] = []

        def fire() -> None:
            nonlocal rounds
            h.flush()
            rounds += 1
            for spec in specs:
                req = Request(f"{spec.synopsis_id}@{rounds}", Verb.ADHOC_QUERY, spec.synopsis_id,
                              query=ROUND_QUERIES[spec.synopsis_id])
                resp = h.engines[responsible].handle(req, publish=False)
                if not resp.ok:
                    failures.append(f"{spec.synopsis_id}: {resp.error}")
            clock.call_at(clock.now + period_ms, fire)

        clock.call_at(clock.now + period_ms, fire)
        batches: list[list[StreamRecord]] = [[] for _ in range(n)]
        owner: dict[str, int] = {}
        for rec in records:
            if rec.event_time >= clock.now:
                for site, batch in enumerate(batches):
                    if batch:
                        h.engines[h.site_ids[site]].ingest_many(batch)
                        batch.clear()
                clock.advance(rec.event_time - clock.now + 1)
            s = owner.get(rec.stream_id)
            if s is None:
                s = owner[rec.stream_id] = site_of(rec.stream_id, n)
            batches[s].append(rec)
        for site, batch in enumerate(batches):
            if batch:
                h.engines[h.site_ids[site]].ingest_many(batch)
        # The feed ends on a period boundary; run the round that closes it.
        clock.advance(max(0, gen.start_ms + gen.n_ticks * gen.tick_ms - clock.now))
        if failures:
            raise RuntimeError("federated round failed: " + "; ".join(failures[:3]))
        total = h.ledger.totals()
        ratios = [st.bytes / st.raw_bytes if st.raw_bytes else float("inf") for st in h.ledger.links().values()]
        worst = max(ratios, default=0.0)
    return {"workflow": "federation", "sites": n, "rounds": rounds, "frames": total.frames,
            "bytes": total.bytes, "raw_bytes": total.raw_bytes,
            "ratio": round(total.bytes / total.raw_bytes, 6) if total.raw_bytes else "",
            "worst_link_ratio": round(worst, 6), "wall_s": round(time.perf_counter() - t0, 3)}
