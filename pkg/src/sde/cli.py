"""Command line entry point: ``sde serve|request|status|ingest|replay|generate|bench``.

Every flag can also come from the environment as ``SDE_<FLAG>`` (upper case,
dashes as underscores, e.g. ``SDE_SITE_ID``). A flag given on the command line
wins over the environment, which wins over the built-in default.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Sequence

from .core import SDEError

DEFAULT_REQUEST = "127.0.0.1:9002"
DEFAULT_DATA = "127.0.0.1:9001"


def _env(flag: str, default=None):
    return os.environ.get("SDE_" + flag.lstrip("-").replace("-", "_").upper(), default)


def _opt(p: argparse.ArgumentParser, flag: str, default=None, type=str, **kw) -> None:
    """An option whose default comes from ``SDE_<FLAG>`` when set."""
    raw = _env(flag)
    p.add_argument(flag, default=type(raw) if raw is not None else default, type=type, **kw)


class _Ordered(argparse.Action):
    """Collects ``(channel, path)`` in command-line order across several flags."""

    def __call__(self, parser, namespace, values, option_string=None):
        items = list(getattr(namespace, self.dest, None) or [])
        items.append((option_string.lstrip("-"), values))
        setattr(namespace, self.dest, items)


# ---------------------------------------------------------------------------
# serve / request / status / ingest / replay


def _make_engine(args):
    from .engine import Engine

    return Engine(workers=args.workers, site_id=args.site_id, mailbox_capacity=args.mailbox_capacity,
                  query_timeout=args.query_timeout)


def cmd_serve(args) -> int:
    from .engine.server import EngineServer
    from .federation import Federation, SiteConfig, TcpTransport

    engine = _make_engine(args)
    federation = None
    union = args.union
    if args.peers:
        config = SiteConfig.from_file(args.peers, args.site_id)
        union = union or config.union_address
        federation = Federation(engine, config, TcpTransport(config), timeout=args.query_timeout)
    server = EngineServer(engine, data=args.data, request=args.request, output=args.output, union=union)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    server.start()
    print(json.dumps({"site": args.site_id, "workers": args.workers, "listening": server.addresses}), flush=True)
    try:
        stop.wait()
    finally:
        server.stop()
        if federation is not None:
            federation.close()
        engine.close()
    return 0


def _lines(path: str):
    if path == "-":
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


def cmd_request(args) -> int:
    from .engine.server import send_lines
    from .protocol import parse_response

    failed = 0
    for reply in send_lines(args.address, _lines(args.file)):
        print(reply)
        try:
            failed += not parse_response(reply).ok
        except SDEError:
            failed += 1
    return 1 if failed else 0


def cmd_status(args) -> int:
    from .engine.server import send_lines
    from .protocol import Request, Verb, format_request

    replies = send_lines(args.address, [format_request(Request(args.request_id, Verb.STATUS))])
    for reply in replies:
        print(reply)
    return 0 if replies else 1


def cmd_ingest(args) -> int:
    from .engine.server import send_lines

    send_lines(args.address, _lines(args.file), read_replies=False)
    return 0


def cmd_replay(args) -> int:
    from .engine.server import replay_file

    if not args.inputs:
        print("replay: give at least one --data, --request or --union file", file=sys.stderr)
        return 2
    with _make_engine(args) as engine:
        for channel, path in args.inputs:
            for line in replay_file(engine, path, channel):
                print(line, flush=True)
    return 0


def cmd_generate(args) -> int:
    from .bench.generator import GeneratorConfig, generate_lines

    gen = GeneratorConfig(n_streams=args.streams, duration_ms=args.duration_ms, seed=args.seed,
                          skew=args.skew, clone=args.clone)
    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        for line in generate_lines(gen):
            out.write(line + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# bench


def _strategies(name: str | None, workers: int):
    from .bench.strategy import Strategy

    chosen = [Strategy(name)] if name else list(Strategy)
    return [(s, workers if s.parallel else 1) for s in chosen]


def cmd_bench(args) -> int:
    from . import bench
    from .bench.generator import GeneratorConfig, generate

    gen = GeneratorConfig(n_streams=args.streams, duration_ms=args.duration_ms, seed=args.seed,
                          skew=args.skew, clone=args.clone)
    rows: list[dict] = []
    if args.workflow == "capacity":
        n_values = [int(v) for v in args.synopses.split(",")]
        rows = bench.run_sdeaas_vs_jobs(n_values, args.slot_budget, gen, args.workers)
    elif args.workflow == "federation":
        sites = [int(v) for v in args.sites.split(",")]
        rows = bench.run_federation_savings(sites, gen, args.period_ms)
    else:
        records = list(generate(gen))
        for strategy, workers in _strategies(args.strategy, args.workers):
            if args.workflow == "correlation":
                cfg = bench.CorrelationConfig(gen, args.window, args.threshold, args.coefficients)
                result = bench.run_workflow(strategy, cfg, workers, records)
            else:
                cfg = bench.ClusteringConfig(gen, args.k, args.bucket_size)
                result = bench.run_clustering_workflow(strategy, cfg, workers, records)
            rows.append(result.row())
            print(f"{strategy.value:<22} workers={workers} throughput={result.throughput:,.0f} tuples/s",
                  file=sys.stderr, flush=True)
    delimiter = " " if args.format == "gnuplot" else ","
    if args.out == "-":
        bench.write_rows(rows, sys.stdout, delimiter)
    else:
        bench.write_rows(rows, args.out, delimiter)
    return 0


# ---------------------------------------------------------------------------
# parser


def _engine_opts(p: argparse.ArgumentParser) -> None:
    _opt(p, "--workers", 4, int, help="worker threads")
    _opt(p, "--site-id", "site-0", help="this site's id")
    _opt(p, "--mailbox-capacity", 8192, int, help="pending records per shard before ingest blocks")
    _opt(p, "--query-timeout", 30.0, float, help="seconds before a query or federation round fails")


def _gen_opts(p: argparse.ArgumentParser, streams: int, duration_ms: int) -> None:
    _opt(p, "--streams", streams, int, help="number of stocks")
    _opt(p, "--duration-ms", duration_ms, int, help="simulated feed length")
    _opt(p, "--seed", 0, int)
    _opt(p, "--skew", 0.0, float, help="Zipf-like exponent of per-stock trade rates")
    _opt(p, "--clone", 1, int, help="emit every record this many times")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sde", description="Synopses data engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run an engine with TCP listeners")
    _opt(p, "--data", ":9001", help="data channel listen address")
    _opt(p, "--request", ":9002", help="request channel listen address")
    _opt(p, "--output", ":9003", help="output channel listen address")
    _opt(p, "--union", None, help="union channel listen address (default: this site's line in --peers)")
    _opt(p, "--peers", None, help="file of 'site_id address' lines naming the union listeners")
    _engine_opts(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("request", help="send request lines to a running engine and print the replies")
    p.add_argument("file", help="NDJSON request file, or - for stdin")
    _opt(p, "--address", DEFAULT_REQUEST, help="request channel address")
    p.set_defaults(func=cmd_request)

    p = sub.add_parser("status", help="ask a running engine for its status")
    _opt(p, "--address", DEFAULT_REQUEST, help="request channel address")
    _opt(p, "--request-id", "status", help="request id to use")
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("ingest", help="stream record lines to a running engine's data channel")
    p.add_argument("file", help="NDJSON record file, or - for stdin")
    _opt(p, "--address", DEFAULT_DATA, help="data channel address")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("replay", help="replay channel files, in the given order, into an in-process engine")
    for ch in ("data", "request", "union"):
        p.add_argument(f"--{ch}", dest="inputs", action=_Ordered, metavar="FILE", help=f"{ch} channel file")
    _engine_opts(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("generate", help="write the synthetic market feed as NDJSON records")
    _gen_opts(p, 50, 300_000)
    _opt(p, "--out", "-", help="output file, or - for stdout")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="run a benchmark workflow and write CSV rows")
    p.add_argument("workflow", choices=["correlation", "clustering", "capacity", "federation"])
    _gen_opts(p, 50, 900_000)
    _opt(p, "--workers", 4, int, help="workers for the parallel strategies")
    _opt(p, "--strategy", None, choices=["Naive", "ParallelOnly", "SynopsisOnly", "SynopsisPlusParallel"],
         help="run one strategy (default: all four)")
    _opt(p, "--out", "results.csv", help="output file, or - for stdout")
    _opt(p, "--format", "csv", choices=["csv", "gnuplot"])
    _opt(p, "--window", 60, int, help="correlation window in ticks")
    _opt(p, "--threshold", 0.9, float, help="correlation threshold")
    _opt(p, "--coefficients", 8, int, help="DFT coefficients")
    _opt(p, "--k", 4, int, help="clusters")
    _opt(p, "--bucket-size", 10, int, help="coreset bucket size")
    _opt(p, "--synopses", "1,10,20,40,41,100,1000", help="capacity: comma-separated synopsis counts")
    _opt(p, "--slot-budget", 40, int, help="capacity: task slots of the job-per-synopsis mode")
    _opt(p, "--sites", "2,4,6,8,10", help="federation: comma-separated site counts")
    _opt(p, "--period-ms", 300_000, int, help="federation: simulated query period")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # reader went away (e.g. `| head`); silence the flush at exit too
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (SDEError, OSError, ValueError) as exc:
        print(f"sde {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
