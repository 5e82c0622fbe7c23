from __future__ import annotations

import csv
import io
import json
import os
import signal
import subprocess
import sys
from pathlib import Path

from sde.cli import build_parser, main
from sde.engine import Engine
from sde.engine.server import EngineServer, send_lines
from sde.protocol import parse_response

GOLDEN = Path(__file__).parent / "golden"


def test_env_supplies_defaults_and_flags_win(monkeypatch):
    monkeypatch.setenv("SDE_WORKERS", "7")
    monkeypatch.setenv("SDE_SITE_ID", "from-env")
    args = build_parser().parse_args(["replay", "--request", "x"])
    assert (args.workers, args.site_id) == (7, "from-env")
    args = build_parser().parse_args(["replay", "--workers", "2", "--request", "x"])
    assert args.workers == 2


def test_replay_keeps_channel_order():
    args = build_parser().parse_args(["replay", "--request", "a", "--data", "b", "--request", "c"])
    assert args.inputs == [("request", "a"), ("data", "b"), ("request", "c")]


def test_replay_reproduces_the_golden_session(capsys):
    rc = main(["replay", "--workers", "4", "--site-id", "site-0",
               "--request", str(GOLDEN / "session.requests.ndjson"), "--data", str(GOLDEN / "session.data.ndjson"),
               "--request", str(GOLDEN / "session.after.ndjson")])
    assert rc == 0
    assert capsys.readouterr().out.splitlines() == (GOLDEN / "session.responses.ndjson").read_text().splitlines()


def test_replay_without_inputs_fails(capsys):
    assert main(["replay"]) == 2


def test_generate_to_stdout(capsys):
    assert main(["generate", "--streams", "3", "--duration-ms", "20000", "--out", "-"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(json.loads(l)["dataset"] == "stocks" for l in lines)


def test_bench_correlation_csv(capsys):
    rc = main(["bench", "correlation", "--streams", "20", "--duration-ms", "300000", "--window", "20",
               "--strategy", "SynopsisOnly", "--out", "-"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 and rows[0]["strategy"] == "SynopsisOnly" and int(rows[0]["tuples"]) > 0


def test_bench_capacity_gnuplot(capsys):
    rc = main(["bench", "capacity", "--streams", "5", "--duration-ms", "20000", "--synopses", "2,3",
               "--slot-budget", "2", "--workers", "1", "--format", "gnuplot", "--out", "-"])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("# workflow mode") and any("refused" in l for l in out)


def test_request_and_status_against_a_server(tmp_path, capsys):
    reqs = tmp_path / "r.ndjson"
    reqs.write_text('{"verb":"Build","request_id":"b","synopsisID":"x","kind":"HyperLogLog","datasetKey":"d",'
                    '"param":{"m":6}}\n{"verb":"Stop","request_id":"s","synopsisID":"nope"}\n')
    with Engine(workers=1) as eng, EngineServer(eng, request=":0") as srv:
        addr = srv.addresses["request"]
        assert main(["request", str(reqs), "--address", addr]) == 1   # the Stop fails
        out = capsys.readouterr().out.splitlines()
        assert [parse_response(l).status for l in out] == ["ok", "error"]
        assert main(["status", "--address", addr, "--request-id", "st"]) == 0
        st = parse_response(capsys.readouterr().out.strip())
        assert st.request_id == "st" and st.value.find("x") is not None


def test_unreachable_server_is_a_clean_error(capsys):
    assert main(["status", "--address", "127.0.0.1:1"]) == 1
    assert "sde status" in capsys.readouterr().err


def test_serve_subprocess(tmp_path):
    env = dict(os.environ, SDE_WORKERS="2")
    proc = subprocess.Popen([sys.executable, "-m", "sde.cli", "serve", "--data", ":0", "--request", ":0",
                             "--output", ":0", "--site-id", "cli"], stdout=subprocess.PIPE, text=True, env=env)
    try:
        banner = json.loads(proc.stdout.readline())
        assert banner["site"] == "cli" and banner["workers"] == 2
        addrs = banner["listening"]
        send_lines(addrs["request"], ['{"verb":"Build","request_id":"b","synopsisID":"c","kind":"CountMin",'
                                      '"datasetKey":"d","keyIndex":0,"param":{"epsilon":0.01,"delta":0.01}}'])
        send_lines(addrs["data"], [json.dumps({"dataset": "d", "stream": "s", "ts": i, "values": [i % 4]})
                                   for i in range(400)], read_replies=False)
        replies = []
        for _ in range(100):
            (reply,) = send_lines(addrs["request"], ['{"verb":"AdHocQuery","request_id":"q","synopsisID":"c",'
                                                     '"query":{"item":1}}'])
            replies.append(parse_response(reply).value)
            if replies[-1] == 100:
                break
        assert replies[-1] == 100
    finally:
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=20) == 0
