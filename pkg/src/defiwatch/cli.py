"""Command line entry point.

Exit codes for ``analyze``: 0 nothing found, 2 vulnerable, 3 inconclusive,
1 on any error.  Other commands return 0 on success and 1 on error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import time
from collections.abc import Sequence
from pathlib import Path
from typing import TextIO

from defiwatch.chain import FileSource, MalformedResponse, RpcClient, RpcSource
from defiwatch.config import ENV_VAR, load_config
from defiwatch.evm.asm import UnknownOpcode, iter_instructions, parse_hex
from defiwatch.monitor import Monitor, top_attackers
from defiwatch.oracle import ConfigError, DecodeFailed, Verdict, analyze, render_report
from defiwatch.txmodel import DatasetError, OutOfOrderInput, SchemaError

log = logging.getLogger("defiwatch")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VULNERABLE = 2
EXIT_INCONCLUSIVE = 3

_VERDICT_EXIT = {
    Verdict.NOT_FOUND: EXIT_OK,
    Verdict.VULNERABLE: EXIT_VULNERABLE,
    Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_ERROR


def _read_bytecode(path: str) -> bytes:
    return parse_hex(Path(path).read_text())


def _read_source_map(path: str | None) -> dict[int, int] | None:
    if path is None:
        return None
    raw = json.loads(Path(path).read_text())
    return {int(k, 0) if isinstance(k, str) else int(k): int(v) for k, v in raw.items()}


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        code = _read_bytecode(args.bytecode)
        source_map = _read_source_map(args.source_map)
        report = analyze(code, cfg.address_book(), cfg.explore_config())
    except (ConfigError, DecodeFailed, ValueError, OSError) as exc:
        return _fail(str(exc))
    out = render_report(report, args.format, source_map)
    if args.out:
        Path(args.out).write_bytes(out)
    else:
        sys.stdout.buffer.write(out)
        sys.stdout.flush()
    return _VERDICT_EXIT[report.verdict]


def _write_alerts(alerts, sink: TextIO) -> None:
    for alert in alerts:
        sink.write(json.dumps(alert.to_json()) + "\n")
    sink.flush()


class _Interrupted(Exception):
    pass


def cmd_monitor(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc))
    mon = Monitor(cfg.rule_config(), cfg.valuation())
    try:
        sink = open(args.out, "w") if args.out else sys.stdout
    except OSError as exc:
        return _fail(str(exc))
    try:
        if args.fixtures:
            source = FileSource(args.fixtures, batch_size=args.batch_size)
            while not source.eof:
                _write_alerts(mon.feed_all(source.next_batch()), sink)
            _write_alerts(mon.flush(), sink)
            return EXIT_OK
        return _monitor_rpc(args, cfg, mon, sink)
    except (SchemaError, OutOfOrderInput, DatasetError, MalformedResponse, OSError) as exc:
        return _fail(str(exc))
    finally:
        if sink is not sys.stdout:
            sink.close()


def _monitor_rpc(args: argparse.Namespace, cfg, mon: Monitor, sink: TextIO) -> int:
    def stop(_signum, _frame):
        raise _Interrupted

    previous = signal.signal(signal.SIGINT, stop)
    signal.signal(signal.SIGTERM, stop)
    source = RpcSource(RpcClient(args.rpc), args.start_block,
                       cfg.confirmation_depth, poll_interval=args.poll_interval)
    try:
        while True:
            batch = source.next_batch()
            _write_alerts(mon.feed_all(batch), sink)
            if not batch:
                time.sleep(source.poll_interval)
    except _Interrupted:
        log.info("interrupted; flushing pending targets")
    finally:
        signal.signal(signal.SIGINT, previous)
    _write_alerts(mon.flush(), sink)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    alerts = []
    try:
        with open(args.alerts) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if not isinstance(rec, dict) or not {"rule", "sender", "block_window",
                                                     "profit_wei", "txs"} <= rec.keys():
                    raise ValueError(f"line {lineno}: not an alert record")
                alerts.append(rec)
    except (OSError, ValueError) as exc:
        return _fail(f"{args.alerts}: {exc}")

    latest = alerts[::-1][:args.latest]
    print(f"Latest suspicious activity ({len(latest)} of {len(alerts)})")
    if not latest:
        print("  (none)")
    for a in latest:
        low, high = a["block_window"]
        print(f"  blocks {low}-{high}  {a['rule']:<16} {a['sender']}  "
              f"profit {a['profit_wei']} wei  {len(a['txs'])} txs")
        for h in a["txs"]:
            print(f"      {h}")
    print()
    print(f"Top attackers (top {args.top})")
    ranked = top_attackers(alerts, args.top)
    if not ranked:
        print("  (none)")
    for addr, count in ranked:
        print(f"  {addr}  {count:>4}  {'#' * min(count, 40)}")
    return EXIT_OK


def cmd_disasm(args: argparse.Namespace) -> int:
    try:
        code = _read_bytecode(args.path)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    try:
        for ins in iter_instructions(code):
            print(ins)
    except UnknownOpcode as exc:
        sys.stdout.flush()
        return _fail(str(exc))
    return EXIT_OK


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defiwatch",
        description="Oracle-dependency analysis and attack monitoring for DeFi contracts.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="find oracle-dependent state updates in bytecode")
    p.add_argument("--bytecode", required=True, help="hex bytecode file")
    p.add_argument("--config", help=f"config file (default: ${ENV_VAR})")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--source-map", help="JSON object mapping code offsets to source lines")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("monitor", help="stream transactions and emit alerts as JSONL")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixtures", help="JSONL transaction file (may be gzipped)")
    src.add_argument("--rpc", help="JSON-RPC endpoint URL")
    p.add_argument("--config", help=f"config file (default: ${ENV_VAR})")
    p.add_argument("--out", help="alert JSONL path (default: stdout)")
    p.add_argument("--batch-size", type=_positive, default=256)
    p.add_argument("--start-block", type=int, default=None)
    p.add_argument("--poll-interval", type=float, default=12.0)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("report", help="summarize an alert file")
    p.add_argument("--alerts", required=True)
    p.add_argument("--top", type=_positive, default=10)
    p.add_argument("--latest", type=_positive, default=5)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("disasm", help="print the instructions of a bytecode file")
    p.add_argument("path")
    p.set_defaults(func=cmd_disasm)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
