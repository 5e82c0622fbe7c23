from __future__ import annotations

import threading
import time

import numpy as np
import pytest

from oracles import normalized_dft
from sde.core import (
    FederationSpec, Partitioning, ProtocolError, Scope, StreamRecord, SynopsisSpec, WindowMode, WindowSpec,
)
from sde.engine import Engine
from sde.engine.engine import Route, splitter_route
from sde.protocol import Request, Verb
from sde.synopses import seeds_for, state_for_spec, unregister_plugin


def recs(n: int, dataset: str = "d", streams: int = 7, t0: int = 0) -> list[StreamRecord]:
    return [StreamRecord(dataset, f"s{i % streams}", t0 + i, (f"s{i % streams}", (i * 31) % 97, float(i % 13)))
            for i in range(n)]


def cm_spec(sid: str = "cm", **kw) -> SynopsisSpec:
    kw.setdefault("key_field", 1)
    kw.setdefault("params", {"epsilon": 0.002, "delta": 0.01, "seed": 3})
    return SynopsisSpec(sid, "CountMin", kw.pop("dataset_id", "d"), **kw)


# ---------------------------------------------------------------------------
# Routing and sharding


@pytest.mark.parametrize("scope,par,fed,site,route", [
    (Scope.whole_source(), 1, None, "a", Route.OUTPUT),
    (Scope.whole_source(), 4, None, "a", Route.LOCAL_MERGE),
    (Scope.single("s"), 1, None, "a", Route.OUTPUT),
    (Scope.per_stream(), 4, None, "a", Route.OUTPUT),
    (Scope.whole_source(), 1, FederationSpec("a"), "a", Route.LOCAL_MERGE),
    (Scope.whole_source(), 4, FederationSpec("a"), "b", Route.UNION_REMOTE),
])
def test_splitter_route(scope, par, fed, site, route):
    spec = SynopsisSpec("x", "CountMin", "d", scope=scope, parallelism=par, federation=fed,
                        params={"epsilon": 0.1, "delta": 0.1})
    assert splitter_route(spec, site) is route


@pytest.mark.parametrize("kind,params,key", [
    ("CountMin", {"epsilon": 0.002, "delta": 0.01}, 1),
    ("HyperLogLog", {"m": 10}, 1),
    ("BloomFilter", {"elements": 5000, "fpr": 0.01}, 1),
    ("AMSSketch", {"epsilon": 0.1, "delta": 0.1}, 1),
    ("FMSketch", {"epsilon": 0.1, "delta": 0.1}, 1),
])
def test_sharded_state_is_bit_identical_to_single_state(engine, kind, params, key):
    spec = SynopsisSpec("x", kind, "d", key_field=key, params=dict(params, seed=5), parallelism=4)
    engine.build(spec)
    data = recs(20_000)
    engine.ingest_many(data)
    engine.flush()
    single = state_for_spec(spec)
    single.add_records(data, key, ())
    assert engine.local_state(engine.entry("x")).to_bytes() == single.to_bytes()


def test_round_robin_spreads_within_one(engine):
    engine.build(cm_spec(parallelism=4, partitioning=Partitioning.ROUND_ROBIN))
    engine.ingest_many(recs(1001, streams=1))
    engine.flush()
    counts = [sh.accepted for sh in engine.entry("cm").shards]
    assert sum(counts) == 1001 and max(counts) - min(counts) <= 1


def test_key_hash_keeps_each_stream_on_one_shard(engine):
    engine.build(cm_spec(parallelism=4))
    engine.ingest_many(recs(700, streams=7))
    engine.flush()
    e = engine.entry("cm")
    counts = sorted(sh.accepted for sh in e.shards)
    assert sum(counts) == 700 and all(c % 100 == 0 for c in counts)


def test_records_for_unknown_dataset_are_dropped(engine):
    engine.build(cm_spec())
    engine.ingest_many(recs(10, dataset="other") + recs(5))
    engine.flush()
    c = engine.status().counters
    assert c["dropped"] == 10 and c["recordsIn"] == 15
    assert engine.entry("cm").items_seen() == 5


def test_single_stream_filters_other_streams(engine):
    engine.build(cm_spec(scope=Scope.single("s2")))
    engine.ingest_many(recs(70))
    engine.flush()
    assert engine.entry("cm").items_seen() == 10


def test_rejected_records_are_counted(engine):
    engine.build(SynopsisSpec("g", "GKQuantiles", "d", key_field=0, params={"epsilon": 0.01}))
    engine.ingest_many(recs(20))  # field 0 is a string: not a number
    engine.flush()
    assert engine.status().counters["rejected"] == 20
    assert engine.entry("g").items_seen() == 0


# ---------------------------------------------------------------------------
# Scopes


def test_per_stream_from_one_request(engine):
    n = 5000
    engine.build(SynopsisSpec("ps", "CountMin", "d", scope=Scope.per_stream(), key_field=1, parallelism=4,
                              params={"epsilon": 0.01, "delta": 0.05}))
    data = [StreamRecord("d", f"sym{i}", i, (f"sym{i}", i % 3)) for i in range(n)]
    data += [StreamRecord("d", "sym42", n, ("sym42", 1))]
    engine.ingest_many(data)
    engine.flush()
    st = engine.status().find("ps")
    assert st.shards == n
    assert engine.estimate("ps", {"item": 42 % 3, "streamID": "sym42"}) == 1
    assert engine.estimate("ps", {"item": 1, "streamID": "sym42"}) >= 1
    assert engine.estimate("ps", {"item": 0, "streamID": "never-seen"}) == 0
    states = engine.stream_states(engine.entry("ps"))
    assert len(states) == n and states["sym7"].estimate({"item": 1}) == 1
    with pytest.raises(ProtocolError):
        engine.local_state(engine.entry("ps"))


def test_per_stream_without_stream_id_answers_every_stream(engine):
    engine.build(SynopsisSpec("ps", "HyperLogLog", "d", scope=Scope.per_stream(), key_field=1, parallelism=2,
                              params={"m": 6}))
    engine.ingest_many(recs(70))
    engine.flush()
    out = engine.estimate("ps", None)
    assert sorted(out) == [f"s{i}" for i in range(7)]


# ---------------------------------------------------------------------------
# Windows


def test_paned_time_window(engine):
    spec = cm_spec(window=WindowSpec(WindowMode.TIME_SLIDING, 100, 10), parallelism=2)
    engine.build(spec)
    data = [StreamRecord("d", f"s{t % 3}", t, ("x", t // 100)) for t in range(1000)]
    engine.ingest_many(data)
    engine.flush()
    assert engine.estimate("cm", {"item": 9}) == 100
    assert engine.estimate("cm", {"item": 8}) == 0
    assert engine.estimate("cm", {"item": 0}) == 0
    # Slide by half a window: the window now spans 950..1049.
    engine.ingest_many(StreamRecord("d", "s0", t, ("x", 10)) for t in range(1000, 1050))
    engine.flush()
    assert engine.estimate("cm", {"item": 9}) == 50
    assert engine.estimate("cm", {"item": 10}) == 50


def test_paned_count_window(engine):
    engine.build(cm_spec(window=WindowSpec(WindowMode.COUNT_SLIDING, 40, 20), parallelism=3))
    engine.ingest_many(StreamRecord("d", f"s{i % 5}", 0, ("x", i // 20)) for i in range(200))
    engine.flush()
    assert [engine.estimate("cm", {"item": k}) for k in (7, 8, 9)] == [0, 20, 20]


def test_slide_must_divide_length_for_paned_kinds(engine):
    resp = engine.handle(Request("r", Verb.BUILD, spec=cm_spec(window=WindowSpec(WindowMode.COUNT_SLIDING, 10, 3))),
                         publish=False)
    assert resp.error["code"] == "parameter_error" and resp.error["field"] == "window.slide"


def test_count_window_dft_reflects_exactly_the_last_values(engine):
    L, c = 32, 5
    engine.build(SynopsisSpec("dft", "DFT", "d", key_field=0, value_fields=(2,), parallelism=2,
                              params={"threshold": 0.9, "coefficients": c, "window": L},
                              window=WindowSpec(WindowMode.COUNT_SLIDING, L, 1)))
    rng = np.random.default_rng(1)
    series = {s: np.cumsum(rng.normal(size=300)) for s in ("a", "b", "c")}
    data = [StreamRecord("d", s, i, (s, 0, float(series[s][i]))) for i in range(300) for s in series]
    engine.ingest_many(data)
    engine.flush()
    for s, xs in series.items():
        est = engine.estimate("dft", {"stream": s})
        ref = normalized_dft(xs[-L:])[1:c + 1]
        assert np.allclose(est.coefficients, ref, atol=1e-9)


def test_late_records_are_counted_and_ignored(engine):
    engine.build(cm_spec(window=WindowSpec(WindowMode.TIME_SLIDING, 100, 10, allowed_lateness=5)))
    engine.ingest_many([StreamRecord("d", "s", 100, ("x", 1)), StreamRecord("d", "s", 90, ("x", 1)),
                        StreamRecord("d", "s", 96, ("x", 1))])
    engine.flush()
    assert engine.entry("cm").late == 1
    assert engine.status().counters["late"] == 1
    assert engine.estimate("cm", {"item": 1}) == 2


# ---------------------------------------------------------------------------
# Continuous queries


def _collect(engine: Engine, sid: str) -> list:
    out: list = []
    engine.add_listener(lambda r: out.append(r) if r.synopsis_id == sid and r.seq is not None else None)
    return out


def test_continuous_on_update_emits_once_per_tuple(engine):
    got = _collect(engine, "gk")
    engine.build(SynopsisSpec("gk", "GKQuantiles", "d", scope=Scope.single("s1"), key_field=2,
                              params={"epsilon": 0.01}, continuous=True, query={"quantile": 0.5}),
                 request_id="b-gk")
    engine.ingest_many(recs(140))
    engine.flush()
    assert [r.seq for r in got] == list(range(20))
    assert all(r.request_id == "b-gk" for r in got)
    assert got[0].value == 1.0


def test_continuous_per_stream_tags_each_emission(engine):
    got = _collect(engine, "ps")
    engine.build(SynopsisSpec("ps", "CountMin", "d", scope=Scope.per_stream(), key_field=1, parallelism=2,
                              params={"epsilon": 0.01, "delta": 0.05}, continuous=True, query={"item": 0}))
    engine.ingest_many(recs(14, streams=7))
    engine.flush()
    assert sorted(r.seq for r in got) == list(range(14))
    assert sorted(k for r in got for k in r.value) == sorted(f"s{i % 7}" for i in range(14))


def test_continuous_whole_source_emits_on_window_close(engine):
    got = _collect(engine, "cm")
    engine.build(cm_spec(parallelism=3, window=WindowSpec(WindowMode.COUNT_SLIDING, 50, 50), continuous=True,
                         query={"item": 1}))
    engine.ingest_many(StreamRecord("d", f"s{i % 4}", i, ("x", 1 if i % 2 else 0)) for i in range(260))
    engine.flush()
    deadline = time.time() + 5
    while len(got) < 5 and time.time() < deadline:
        time.sleep(0.01)
    assert [r.seq for r in got] == [0, 1, 2, 3, 4]
    assert [r.value for r in got] == [25] * 5


def test_continuous_whole_source_needs_a_window(engine):
    resp = engine.handle(Request("r", Verb.BUILD, spec=cm_spec(continuous=True, query={"item": 1})), publish=False)
    assert resp.error["code"] == "parameter_error"


# ---------------------------------------------------------------------------
# Lifecycle


def test_two_synopses_on_one_dataset(engine):
    engine.build(cm_spec("a"))
    engine.build(SynopsisSpec("b", "HyperLogLog", "d", key_field=1, params={"m": 8}))
    engine.ingest_many(recs(300))
    engine.flush()
    assert engine.entry("a").items_seen() == engine.entry("b").items_seen() == 300
    engine.stop("a")
    engine.ingest_many(recs(100))
    engine.flush()
    assert engine.entry("b").items_seen() == 400
    assert engine.synopsis_ids() == ["b"]
    assert engine.query("a", {"item": 1}).error["code"] == "unknown_synopsis"


def test_stop_during_merge_gives_answer_or_clean_error():
    with Engine(workers=4) as eng:
        for rnd in range(10):
            eng.build(cm_spec("cm", parallelism=4))
            eng.ingest_many(recs(20_000))
            futs = [eng.submit(Request(f"q{i}", Verb.ADHOC_QUERY, "cm", query={"item": 3})) for i in range(8)]
            eng.stop("cm")
            for f in futs:
                r = f.result(timeout=30)
                assert r.ok or r.error["code"] == "unknown_synopsis", r.error
            assert eng.merger.pending() == 0


def test_concurrent_queries_agree(engine):
    engine.build(cm_spec(parallelism=4))
    engine.ingest_many(recs(10_000))
    engine.flush()
    want = engine.estimate("cm", {"item": 5})
    futs = [engine.submit(Request(f"q{i}", Verb.ADHOC_QUERY, "cm", query={"item": 5})) for i in range(40)]
    assert {f.result(timeout=30).value for f in futs} == {want}


def test_status_reports_counts(engine):
    engine.build(cm_spec(parallelism=2))
    engine.ingest_many(recs(50))
    engine.flush()
    rep = engine.status()
    e = rep.find("cm")
    assert (e.kind, e.scope, e.parallelism, e.items_seen) == ("CountMin", "WholeSource", 2, 50)
    assert rep.counters["synopses"] == 1 and rep.counters["workers"] == 4


def test_stream_sketches_can_be_joined_by_id(engine):
    for sid in ("x", "y"):
        engine.build(SynopsisSpec(sid, "AMSSketch", "d", key_field=1, params={"epsilon": 0.1, "delta": 0.1,
                                                                              "seed": 1}))
    engine.ingest_many(recs(500))
    engine.flush()
    # Same data and seeds, so the join of x with y is the self-join of x.
    assert engine.estimate("x", {"other": "y"}) == pytest.approx(engine.estimate("x", None))


def test_load_plugin_by_factory(engine):
    try:
        r = engine.handle_line('{"verb":"Load","request_id":"l","plugin":"Doubler",'
                               '"factory":"plugins.doubler:Doubler"}', publish=False)
        assert r.ok and r.value == "Doubler"
        engine.build(SynopsisSpec("dbl", "Doubler", "d", key_field=1, parallelism=3))
        engine.ingest_many(recs(100))
        engine.flush()
        assert engine.estimate("dbl") == 2 * sum((i * 31) % 97 for i in range(100))
    finally:
        unregister_plugin("Doubler")
    r = engine.handle_line('{"verb":"Load","request_id":"l","plugin":"X","factory":"plugins.nope:X"}',
                           publish=False)
    assert r.error["code"] == "unknown_factory"


def test_red_path_is_isolated_from_a_saturated_data_path():
    from plugins.doubler import Sluggish
    from sde.synopses import register_plugin

    register_plugin("Sluggish", Sluggish)
    try:
        with Engine(workers=2, mailbox_capacity=2000) as eng:
            eng.build(SynopsisSpec("slow", "Sluggish", "d", key_field=1, params={"delay_ms": 1}, parallelism=2))
            eng.build(cm_spec("fast", dataset_id="e"))
            eng.ingest_many(recs(500, dataset="e"))
            stop = threading.Event()

            def pump():
                while not stop.is_set():
                    eng.ingest_many(recs(500))

            t = threading.Thread(target=pump, daemon=True)
            t.start()
            time.sleep(0.3)
            lat = []
            for i in range(40):
                t0 = time.perf_counter()
                r = eng.handle(Request(f"q{i}", Verb.ADHOC_QUERY, "fast", query={"item": 3}), publish=False)
                s = eng.handle(Request(f"s{i}", Verb.STATUS), publish=False)
                lat.append(time.perf_counter() - t0)
                assert r.ok and s.ok
            assert eng.status().counters["queued"] > 0
            stop.set()
            eng.close()
            t.join(timeout=10)
        assert max(lat) < 0.5
    finally:
        unregister_plugin("Sluggish")


def test_seeds_are_derived_from_the_synopsis_id():
    a = state_for_spec(cm_spec("a", params={"epsilon": 0.1, "delta": 0.1}))
    b = state_for_spec(cm_spec("b", params={"epsilon": 0.1, "delta": 0.1}))
    assert a.seeds != b.seeds
    assert a.seeds[0] == seeds_for(cm_spec("a", params={}))[0]
    pinned = state_for_spec(cm_spec("a", params={"epsilon": 0.1, "delta": 0.1, "seed": 9}))
    assert pinned.seeds[0] == 9
