from __future__ import annotations

import pytest

from sde.core import FederationSpec, ProtocolError, StreamRecord, SynopsisSpec
from sde.engine import Engine
from sde.engine.server import EngineServer
from sde.federation import (
    CommLedger, Federation, FederationHarness, SimClock, SiteConfig, TcpTransport, UnionFrame,
    schedule_periodic_federation,
)
from sde.synopses import state_for_spec


def fed_spec(sid: str, kind: str, params: dict, responsible: str = "site-0", **kw) -> SynopsisSpec:
    return SynopsisSpec(sid, kind, "d", key_field=1, params=dict(params, seed=4),
                        federation=FederationSpec(responsible), **kw)


def rec(i: int, stream: str = "s") -> StreamRecord:
    return StreamRecord("d", stream, i, (stream, i))


def feed_disjoint(h: FederationHarness, per_site: int) -> list[StreamRecord]:
    everything = []
    for k, sid in enumerate(h.site_ids):
        data = [rec(k * per_site + i, f"{sid}-s{i % 5}") for i in range(per_site)]
        h.engines[sid].ingest_many(data)
        everything += data
    h.flush()
    return everything


def test_hll_over_three_sites_equals_hll_over_the_union():
    spec = fed_spec("hll", "HyperLogLog", {"m": 10})
    with FederationHarness(3) as h:
        h.build(spec)
        data = feed_disjoint(h, 10_000)
        resp = h.query("site-0", "hll")
        assert resp.ok, resp.error
        whole = state_for_spec(spec)
        whole.add_records(data, 1, ())
        assert resp.value == whole.estimate()
        assert abs(resp.value - 30_000) / 30_000 < 1.04 / 32 * 3


def test_fm_federation_is_the_bitwise_or():
    spec = fed_spec("fm", "FMSketch", {"epsilon": 0.2, "delta": 0.1})
    with FederationHarness(3) as h:
        h.build(spec)
        feed_disjoint(h, 2000)
        eng = h.engines["site-0"]
        merged = h.federations["site-0"].collect(eng.entry("fm"))
        parts = [h.engines[s].local_state(h.engines[s].entry("fm")) for s in h.site_ids]
        ored = parts[0].bitmaps.copy()
        for p in parts[1:]:
            ored |= p.bitmaps
        assert (merged.bitmaps == ored).all()


def test_single_site_federation_equals_local_answer():
    spec = fed_spec("cm", "CountMin", {"epsilon": 0.01, "delta": 0.01})
    with FederationHarness(1) as h, Engine(workers=1) as plain:
        h.build(spec)
        plain.build(SynopsisSpec("cm", "CountMin", "d", key_field=1, params=dict(spec.params)))
        data = [rec(i % 50) for i in range(1000)]
        h.engines["site-0"].ingest_many(data)
        plain.ingest_many(data)
        h.flush()
        plain.flush()
        assert h.query("site-0", "cm", {"item": 7}).value == plain.estimate("cm", {"item": 7}) == 20
        assert h.ledger.totals().frames == 0


@pytest.mark.parametrize("responsible", ["site-0", "site-2"])
def test_answer_does_not_depend_on_where_the_merge_happens(responsible):
    spec = fed_spec("cm", "CountMin", {"epsilon": 0.001, "delta": 0.01}, responsible=responsible, parallelism=2)
    with FederationHarness(3, workers=2) as h:
        h.build(spec)
        data = feed_disjoint(h, 3000)
        whole = state_for_spec(spec)
        whole.add_records(data, 1, ())
        eng = h.engines[responsible]
        merged = h.federations[responsible].collect(eng.entry("cm"))
        assert merged.to_bytes() == whole.to_bytes()


def test_query_at_a_non_responsible_site_is_forwarded():
    with FederationHarness(3) as h:
        h.build(fed_spec("hll", "HyperLogLog", {"m": 8}))
        feed_disjoint(h, 500)
        a, b = h.query("site-0", "hll"), h.query("site-2", "hll")
        assert a.ok and b.ok and a.value == b.value
        assert b.site_id == "site-0"
        with pytest.raises(ProtocolError) as info:
            h.federations["site-1"].collect(h.engines["site-1"].entry("hll"))
        assert info.value.code == "not_responsible"


def test_digest_federation_of_dft():
    spec = SynopsisSpec("dft", "DFT", "d", key_field=0, value_fields=(1,),
                        params={"threshold": 0.9, "coefficients": 4, "window": 16},
                        federation=FederationSpec("site-0"))
    with FederationHarness(2) as h:
        h.build(spec)
        for k, sid in enumerate(h.site_ids):
            h.engines[sid].ingest_many(StreamRecord("d", f"x{k}", i, (f"x{k}", float((i * (k + 3)) % 7)))
                                       for i in range(40))
        h.flush()
        resp = h.query("site-0", "dft")
        assert resp.ok and sorted(resp.value) == ["x0", "x1"]
        local = h.engines["site-1"].estimate("dft", {"stream": "x1"})
        assert resp.value["x1"] == local
        assert [st.raw_bytes > st.bytes for st in h.ledger.links().values()] == [True]


def test_periodic_rounds_are_ledgered():
    spec = fed_spec("hll", "HyperLogLog", {"m": 10})
    with FederationHarness(10) as h:
        h.build(spec)
        feed_disjoint(h, 100)
        clock = SimClock()
        sched = schedule_periodic_federation(h.federations["site-0"], "hll", 300.0, clock)
        per_round = []
        for _ in range(3):
            before = h.ledger.totals()
            clock.advance(300.0)
            after = h.ledger.totals()
            per_round.append((after.frames - before.frames, after.bytes - before.bytes))
        assert sched.rounds == 3 and sched.skipped == 0
        assert all(r.ok for r in sched.results)
        assert [f for f, _ in per_round] == [9, 9, 9]
        assert len({b for _, b in per_round}) == 1
        assert h.ledger.frames_to("site-0") == 27


def test_ledger_counts_exactly_the_bytes_written():
    with FederationHarness(2) as h:
        h.build(fed_spec("hll", "HyperLogLog", {"m": 6}))
        feed_disjoint(h, 100)
        sent: list[str] = []
        net_send = h.network.send
        h.network.send = lambda o, d, line: (sent.append(line) if '"frame"' in line else None) or net_send(o, d, line)
        assert h.query("site-0", "hll").ok
        ((key, st),) = h.ledger.links().items()
        assert key == ("hll", "site-1", "site-0")
        assert st.bytes == sum(len(l.encode()) + 1 for l in sent)
        assert st.raw_bytes == sum(len(r.to_line()) + 1 for r in
                                   [rec(100 + i, f"site-1-s{i % 5}") for i in range(100)])


def test_missing_site_gives_partial_federation():
    with FederationHarness(3, timeout=0.5) as h:
        h.build(fed_spec("hll", "HyperLogLog", {"m": 6}))
        h.engines["site-2"].close()
        resp = h.query("site-0", "hll")
        assert resp.error["code"] == "partial_federation"
        assert resp.error["absent"] == ["site-2"]


def test_site_without_the_synopsis_fails_the_round():
    with FederationHarness(2, timeout=2) as h:
        h.engines["site-0"].build(fed_spec("hll", "HyperLogLog", {"m": 6}))
        resp = h.query("site-0", "hll")
        assert resp.error["code"] == "unknown_synopsis"


def test_union_frame_round_trip_and_length_check():
    f = UnionFrame("site-1", "k", "hll", "HyperLogLog", "state", b"\x00\x01abc")
    assert UnionFrame.from_dict(f.to_dict()) == f
    bad = dict(f.to_dict(), bytes=3)
    with pytest.raises(ProtocolError) as info:
        UnionFrame.from_dict(bad)
    assert info.value.code == "frame_error"


def test_ledger_rejects_negative_counts():
    with pytest.raises(ValueError):
        CommLedger().record("x", "a", "b", -1, 0)


def test_peers_file(tmp_path):
    p = tmp_path / "peers.txt"
    p.write_text("# sites\nsite-0 127.0.0.1:7000\n\nsite-1 127.0.0.1:7001  # second\n")
    cfg = SiteConfig.from_file(p, "site-0")
    assert cfg.sites == ["site-0", "site-1"]
    assert cfg.union_address == "127.0.0.1:7000"
    assert cfg.address_of("site-1") == "127.0.0.1:7001"
    with pytest.raises(ProtocolError):
        cfg.address_of("site-9")


@pytest.mark.parametrize("text", ["site-0", "a x\na y", "a b c"])
def test_bad_peers_file(text):
    with pytest.raises(Exception) as info:
        SiteConfig.parse_peers(text)
    assert info.value.to_dict()["field"] == "peers"


def test_federation_over_tcp():
    spec = fed_spec("hll", "HyperLogLog", {"m": 8}, responsible="a")
    with Engine(workers=1, site_id="a") as ea, Engine(workers=1, site_id="b") as eb:
        sa, sb = EngineServer(ea, union=":0"), EngineServer(eb, union=":0")
        peers = {"a": sa.addresses["union"], "b": sb.addresses["union"]}
        with sa, sb:
            fa = Federation(ea, SiteConfig("a", peers), TcpTransport(SiteConfig("a", peers)))
            fb = Federation(eb, SiteConfig("b", peers), TcpTransport(SiteConfig("b", peers)))
            try:
                for eng, base in ((ea, 0), (eb, 5000)):
                    eng.build(spec)
                    eng.ingest_many(rec(base + i) for i in range(5000))
                    eng.flush()
                r = ea.query("hll")
                assert r.ok and abs(r.value - 10_000) / 10_000 < 0.3
                assert fa.ledger.totals().frames == 0 and fb.ledger.totals().frames == 1
            finally:
                fa.close()
                fb.close()
