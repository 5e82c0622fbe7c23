"""One shared engine versus one job per synopsis.

Without a shared engine every synopsis is its own job: it occupies a task
slot, reads the whole feed and parses every line itself. A cluster with
``slot_budget`` slots therefore refuses the synopsis after the last slot is
taken. The shared engine parses the feed once and routes each record only to
the synopses that want it, so synopses cost memory and routing rather than
slots.

Jobs run one after another in this process; with the interpreter lock that
is what concurrent jobs on one machine would cost anyway.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..core import RegistrationError, Scope, StreamRecord, SynopsisSpec
from ..engine import Engine
from ..protocol import Request, Verb
from ..synopses import state_for_spec
from .generator import GeneratorConfig, generate_lines, symbols

DATASET = "stocks"
CM_PARAMS = {"epsilon": 0.01, "delta": 0.01}
PRICE = 2


class SlotsExhausted(RegistrationError):
    code = "slots_exhausted"


def single_stream_cm(i: int, symbol: str) -> SynopsisSpec:
    """CountMin over the trade and bid prices of one stock."""
    return SynopsisSpec(f"cm-{i}", "CountMin", DATASET, scope=Scope.single(symbol), key_field=PRICE,
                        params=dict(CM_PARAMS))


class JobCluster:
    """A fixed number of task slots; every synopsis is a job holding one slot."""

    def __init__(self, slot_budget: int) -> None:
        if slot_budget < 1:
            raise ValueError("slot_budget must be >= 1")
        self.slot_budget = slot_budget
        self.jobs: list[tuple[SynopsisSpec, Engine]] = []

    def submit(self, spec: SynopsisSpec) -> None:
        if len(self.jobs) >= self.slot_budget:
            raise SlotsExhausted(f"synopsis #{len(self.jobs) + 1} refused: all {self.slot_budget} task slots "
                                 f"are taken", synopsis_id=spec.synopsis_id)
        engine = Engine(workers=1, site_id=f"job-{len(self.jobs)}", request_threads=1)
        engine.build(spec)
        self.jobs.append((spec, engine))

    def run(self, lines: Sequence[str]) -> None:
        """Every job reads and parses the whole feed."""
        for _, engine in self.jobs:
            engine.ingest_many([StreamRecord.from_line(line) for line in lines])
            engine.flush()

    def close(self) -> None:
        for _, engine in self.jobs:
            engine.close()
        self.jobs.clear()


def _sdeaas(specs: Sequence[SynopsisSpec], lines: Sequence[str], workers: int) -> float:
    with Engine(workers=workers, site_id="sdeaas") as engine:
        for spec in specs:
            engine.build(spec)
        t0 = time.perf_counter()
        engine.ingest_many([StreamRecord.from_line(line) for line in lines])
        engine.flush()
        return time.perf_counter() - t0


def _jobs(specs: Sequence[SynopsisSpec], lines: Sequence[str], slot_budget: int) -> tuple[float | None, int]:
    """Wall time of the job-per-synopsis run, or None if a synopsis was refused."""
    cluster = JobCluster(slot_budget)
    try:
        for spec in specs:
            try:
                cluster.submit(spec)
            except SlotsExhausted:
                return None, len(cluster.jobs)
        t0 = time.perf_counter()
        cluster.run(lines)
        return time.perf_counter() - t0, len(cluster.jobs)
    finally:
        cluster.close()


def run_sdeaas_vs_jobs(n_values: Iterable[int] = (1, 10, 20, 40, 41, 100, 1000), slot_budget: int = 40,
                       generator: GeneratorConfig | None = None, workers: int = 4) -> list[dict]:
    """One row per mode and synopsis count.

    Aggregate throughput counts a feed tuple once per synopsis that consumes
    it: ``n * tuples / wall``. Refused runs report ``status="refused"`` and no
    throughput.
    """
    gen = generator or GeneratorConfig(n_streams=100, duration_ms=60_000)
    lines = list(generate_lines(gen))
    syms = symbols(gen.n_streams)
    rows = []
    for n in n_values:
        specs = [single_stream_cm(i, syms[i % len(syms)]) for i in range(n)]
        wall = _sdeaas(specs, lines, workers)
        rows.append(_row("SDEaaS", n, slot_budget, len(lines), wall, n))
        wall, placed = _jobs(specs, lines, slot_budget)
        rows.append(_row("NonSDEaaS", n, slot_budget, len(lines), wall, placed))
    return rows


def _row(mode: str, n: int, slot_budget: int, tuples: int, wall: float | None, placed: int) -> dict:
    ok = wall is not None
    return {"workflow": "capacity", "mode": mode, "n_synopses": n, "slot_budget": slot_budget,
            "placed": placed, "status": "ok" if ok else "refused", "tuples": tuples,
            "wall_s": round(wall, 6) if ok else "",
            "throughput": round(n * tuples / wall, 3) if ok and wall > 0 else ""}


@dataclass
class CapacityCheck:
    """Outcome of building many CountMin synopses in one engine and checking every answer."""

    synopses: int = 0           # registered synopsis ids
    states: int = 0             # live CountMin states (per-stream states count one each)
    queried: int = 0
    correct: int = 0
    mismatches: list[str] = field(default_factory=list)
    wall_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.queried == self.states and self.correct == self.queried


def sdeaas_capacity_check(n_streams: int = 1000, explicit: int = 500, workers: int = 4,
                          duration_ms: int = 60_000, seed: int = 0) -> CapacityCheck:
    """Build a per-stream CountMin over ``n_streams`` stocks plus ``explicit``
    single-stream ones, feed the generator, then ask every state an ad-hoc
    query and compare both the answer and the state bytes with a CountMin
    built directly from the same records."""
    t0 = time.perf_counter()
    gen = GeneratorConfig(n_streams=n_streams, duration_ms=duration_ms, seed=seed)
    lines = list(generate_lines(gen))
    records = [StreamRecord.from_line(line) for line in lines]
    syms = symbols(n_streams)
    per_stream = SynopsisSpec("cm-all", "CountMin", DATASET, scope=Scope.per_stream(), key_field=PRICE,
                              params=dict(CM_PARAMS))
    singles = [single_stream_cm(i, syms[i % n_streams]) for i in range(explicit)]
    by_stream: dict[str, list[StreamRecord]] = {}
    for rec in records:
        by_stream.setdefault(rec.stream_id, []).append(rec)

    def reference(spec: SynopsisSpec, stream: str):
        ref = state_for_spec(spec)
        for rec in by_stream.get(stream, ()):
            ref.add(*ref.extract(rec, spec.key_field, spec.value_fields))
        return ref

    out = CapacityCheck()
    with Engine(workers=workers, site_id="capacity") as engine:
        for spec in [per_stream, *singles]:
            engine.build(spec)
        engine.ingest_many(records)
        engine.flush()
        out.synopses = len(engine.synopsis_ids())
        checks: list[tuple[str, SynopsisSpec, str, dict]] = []
        for s in syms:
            probe = by_stream[s][0].values[PRICE] if s in by_stream else 0.0
            checks.append((f"cm-all/{s}", per_stream, s, {"streamID": s, "item": probe}))
        for spec in singles:
            s = spec.scope.stream_id
            probe = by_stream[s][0].values[PRICE] if s in by_stream else 0.0
            checks.append((spec.synopsis_id, spec, s, {"item": probe}))
        out.states = len(checks)
        states = engine.stream_states(engine.entry(per_stream.synopsis_id))
        for n, (label, spec, stream, query) in enumerate(checks):
            resp = engine.handle(Request(f"cap{n}", Verb.ADHOC_QUERY, spec.synopsis_id, query=query),
                                 publish=False)
            out.queried += 1
            ref = reference(spec, stream)
            if spec is per_stream:
                live = states.get(stream)
            else:
                live = engine.local_state(engine.entry(spec.synopsis_id))
            same = (resp.ok and resp.value == ref.estimate({"item": query["item"]})
                    and live is not None and live.to_bytes() == ref.to_bytes())
            if same:
                out.correct += 1
            else:
                out.mismatches.append(label)
    out.wall_s = time.perf_counter() - t0
    return out
