"""Command-line interface.

Subcommands: gen (synthetic raw traces), aggregate (raw -> flow
records), print (table or JSON lines), policy (rule evaluation and
tagging), stats (stream summary).  Stdout carries data, stderr carries
diagnostics.  Exit codes: 0 success, 1 malformed data or policy error,
2 I/O failure.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from collections import Counter
from datetime import datetime, timezone
from typing import BinaryIO, Iterator

from . import gen as genmod
from .aggregate import AggregatorConfig, aggregate_file, default_flow_timeout_ns
from .codec import MAGIC, SfWriter, read_stream
from .engine import run_policy
from .jsonlines import read_json_lines, record_to_json, write_json_lines
from .model import (
    EVENT_TYPES,
    FLOW_TYPES,
    TYPE_CODES,
    Container,
    DanglingOidError,
    File,
    FileEvent,
    FileFlow,
    Header,
    NetworkEvent,
    NetworkFlow,
    OpFlags,
    Process,
    ProcessEvent,
    Record,
    SysflowError,
    opflags_to_string,
)
from .policy import PolicyAst, PolicyError, merge_policies, parse_policy
from .store import EntityStore, command_line, format_ip

_NS = 1_000_000_000

TABLE_COLUMNS = (
    "#", "Type", "Process", "PPID", "PID", "Op Flags",
    "Start Time", "End Time", "Resource", "Reads", "Writes", "Cont ID",
)


def _open_in_binary(path: str) -> BinaryIO:
    if path == "-":
        return sys.stdin.buffer
    return open(path, "rb")


def _open_out_binary(path: str) -> BinaryIO:
    if path == "-":
        return sys.stdout.buffer
    return open(path, "wb")


def _open_in_text(path: str):
    if path == "-":
        return sys.stdin
    return open(path, "r", encoding="utf-8")


def _open_out_text(path: str):
    if path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8")


def _close(f, path: str) -> None:
    if path != "-":
        f.close()


def _iter_records(path: str, lenient: bool = False) -> Iterator[Record]:
    """Read a record stream, sniffing binary container vs JSON lines."""
    src = _open_in_binary(path)
    buf = src if isinstance(src, io.BufferedReader) else io.BufferedReader(src)
    head = buf.peek(len(MAGIC))[: len(MAGIC)]
    try:
        if head == MAGIC:
            yield from read_stream(buf, lenient=lenient)
        else:
            yield from read_json_lines(io.TextIOWrapper(buf, encoding="utf-8"))
    finally:
        _close(buf, path)


# -- gen ---------------------------------------------------------------------

_PROFILE_PARAMS = {
    "attack_table2": (),
    "db": ("n_ops", "duration_s"),
    "web": ("n_conns", "tid_handoff"),
    "threads": ("n_threads",),
}


def cmd_gen(args: argparse.Namespace) -> int:
    allowed = _PROFILE_PARAMS[args.profile]
    params = {}
    for name in ("n_ops", "duration_s", "n_conns", "tid_handoff", "n_threads"):
        value = getattr(args, name)
        if value is None:
            continue
        if name not in allowed:
            raise SysflowError(f"--{name.replace('_', '-')} does not apply to profile {args.profile}")
        params[name] = value
    events = genmod.generate(args.profile, seed=args.seed, **params)
    dest = _open_out_text(args.out)
    try:
        n = genmod.write_raw(events, dest)
    finally:
        _close(dest, args.out)
    print(f"profile={args.profile} seed={args.seed} raw_events={n}", file=sys.stderr)
    return 0


# -- aggregate ---------------------------------------------------------------

def cmd_aggregate(args: argparse.Namespace) -> int:
    if args.timeout_secs is not None:
        timeout_ns = int(args.timeout_secs * _NS)
        if timeout_ns <= 0:
            raise SysflowError("--timeout-secs must be positive")
    else:
        timeout_ns = default_flow_timeout_ns()
    config = AggregatorConfig(
        flow_timeout_ns=timeout_ns,
        orphan_fd=args.orphan_fd,
        hostname=args.hostname,
    )
    src = _open_in_text(args.input)
    dest = _open_out_binary(args.output) if args.format == "binary" else _open_out_text(args.output)
    try:
        stats = aggregate_file(
            src, dest, config, out_format=args.format, compression=args.compression
        )
    finally:
        _close(src, args.input)
        _close(dest, args.output)
    print(
        f"raw_events={stats.raw_events} sf_records={stats.records} "
        f"ratio={stats.ratio:.1f} bytes={stats.bytes_written}",
        file=sys.stderr,
    )
    return 0


# -- print -------------------------------------------------------------------

def _fmt_time(ns: int) -> str:
    dt = datetime.fromtimestamp(ns // _NS, tz=timezone.utc)
    return f"{dt.month}/{dt.day}T{dt.hour:02d}:{dt.minute:02d}"


def _fmt_count(ops: int, nbytes: int) -> str:
    return f"{ops}:{nbytes}" if ops else ":"


def _endpoint(sip: int, sport: int, dip: int, dport: int) -> str:
    left = f"{format_ip(sip)}:{sport}"
    if dip == 0 and dport == 0:
        return left
    return f"{left} -- {format_ip(dip)}:{dport}"


def _ent(store: EntityStore, oid: int, cls: type):
    if not oid:
        return None
    try:
        ent = store.get(oid)
    except DanglingOidError:
        return None
    return ent if isinstance(ent, cls) else None


def _table_row(rec: Record, store: EntityStore) -> list[str]:
    proc = _ent(store, rec.proc_oid, Process)
    parent = _ent(store, proc.parent_oid, Process) if proc else None
    container = _ent(store, proc.container_oid, Container) if proc else None
    if isinstance(rec, (ProcessEvent, FileEvent, NetworkEvent)):
        start, end = rec.ts, ""
    else:
        start, end = rec.start_ts, _fmt_time(rec.end_ts)
    resource, reads, writes = "", ":", ":"
    if isinstance(rec, FileFlow):
        f = _ent(store, rec.file_oid, File)
        resource = f.path if f else f"file:{rec.file_oid}"
        reads = _fmt_count(rec.num_reads, rec.bytes_read)
        writes = _fmt_count(rec.num_writes, rec.bytes_written)
    elif isinstance(rec, FileEvent):
        f = _ent(store, rec.file_oid, File)
        resource = f.path if f else f"file:{rec.file_oid}"
    elif isinstance(rec, NetworkFlow):
        resource = _endpoint(rec.sip, rec.sport, rec.dip, rec.dport)
        reads = _fmt_count(rec.num_recvs, rec.bytes_received)
        writes = _fmt_count(rec.num_sends, rec.bytes_sent)
    elif isinstance(rec, NetworkEvent):
        resource = _endpoint(rec.sip, rec.sport, rec.dip, rec.dport)
    return [
        TYPE_CODES[type(rec)],
        command_line(proc) if proc else "",
        str(parent.pid) if parent else "",
        str(proc.pid) if proc else "",
        opflags_to_string(rec.opflags, type(rec)),
        _fmt_time(start),
        end,
        resource,
        reads,
        writes,
        container.name if container else "",
    ]


def render_table(records, dest) -> int:
    """Render behavior records as a fixed-width table sorted by start time."""
    store = EntityStore()
    rows: list[tuple[int, int, Record]] = []
    n = 0
    for rec in records:
        if isinstance(rec, Header):
            continue
        if isinstance(rec, EVENT_TYPES):
            rows.append((rec.ts, n, rec))
        elif isinstance(rec, FLOW_TYPES):
            rows.append((rec.start_ts, n, rec))
        else:
            store.add(rec)
        n += 1
    rows.sort(key=lambda item: (item[0], item[1]))
    cells = [list(TABLE_COLUMNS)]
    for i, (_, _, rec) in enumerate(rows, start=1):
        cells.append([str(i)] + _table_row(rec, store))
    widths = [max(len(row[c]) for row in cells) for c in range(len(TABLE_COLUMNS))]
    for row in cells:
        line = "  ".join(cell.ljust(w) for cell, w in zip(row, widths))
        dest.write(line.rstrip() + "\n")
    return len(rows)


def cmd_print(args: argparse.Namespace) -> int:
    records = _iter_records(args.input, lenient=args.lenient)
    dest = _open_out_text(args.output)
    try:
        if args.format == "table":
            render_table(records, dest)
        else:
            for rec in records:
                dest.write(record_to_json(rec) + "\n")
    finally:
        _close(dest, args.output)
    return 0


# -- policy ------------------------------------------------------------------

def _load_policies(paths: list[str]) -> PolicyAst:
    asts = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            asts.append(parse_policy(text))
        except PolicyError as exc:
            raise SysflowError(f"{path}: {exc}") from exc
    return merge_policies(asts)


def _rec_ts(rec: Record) -> int:
    return rec.ts if isinstance(rec, EVENT_TYPES) else rec.start_ts


def cmd_policy(args: argparse.Namespace) -> int:
    ast = _load_policies(args.policies)
    records = _iter_records(args.input, lenient=args.lenient)
    out = _open_out_text(args.output)
    tagged_sink = None
    writer = None
    emitted: list[Record] = []
    if args.emit_tagged:
        if args.format == "binary":
            tagged_sink = _open_out_binary(args.emit_tagged)
        else:
            tagged_sink = _open_out_text(args.emit_tagged)
    n_findings = 0
    try:
        for rec, findings in run_policy(ast, records):
            for finding in findings:
                n_findings += 1
                attrs = {
                    k: v for k, v in finding.shown.items() if v is not None
                }
                line = {
                    "rule": finding.rule_name,
                    "ts": _rec_ts(finding.record),
                    "type": TYPE_CODES[type(finding.record)],
                    "attrs": attrs,
                }
                if finding.added_tags:
                    line["tags"] = list(finding.added_tags)
                out.write(json.dumps(line, separators=(",", ":")) + "\n")
            if tagged_sink is not None:
                if args.format == "binary":
                    if writer is None:
                        if not isinstance(rec, Header):
                            raise SysflowError("stream does not start with a header")
                        writer = SfWriter(tagged_sink, rec, compression=args.compression)
                    else:
                        writer.write(rec)
                else:
                    emitted.append(rec)
        if writer is not None:
            writer.close()
        if tagged_sink is not None and args.format == "jsonl":
            write_json_lines(iter(emitted), tagged_sink)
    finally:
        _close(out, args.output)
        if tagged_sink is not None:
            _close(tagged_sink, args.emit_tagged)
    print(f"findings={n_findings}", file=sys.stderr)
    return 0


# -- stats -------------------------------------------------------------------

def compute_stats(records) -> dict:
    store = EntityStore()
    entities = Counter()
    by_type = Counter({code: 0 for code in TYPE_CODES.values()})
    ops: dict[str, Counter] = {code: Counter() for code in TYPE_CODES.values()}
    proc_records = Counter()
    total = 0
    for rec in records:
        total += 1
        code = TYPE_CODES.get(type(rec))
        if code is None:
            if not isinstance(rec, Header):
                store.add(rec)
                entities[type(rec).__name__.lower()] += 1
            continue
        by_type[code] += 1
        for op in OpFlags:
            if rec.opflags & op:
                ops[code][op.name] += 1
        proc = _ent(store, rec.proc_oid, Process)
        if proc is not None:
            proc_records[command_line(proc)] += 1
    top = [
        {"process": name, "records": count}
        for name, count in sorted(proc_records.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
    ]
    return {
        "total": total,
        "entities": dict(sorted(entities.items())),
        "records": dict(by_type),
        "ops": {code: dict(sorted(c.items())) for code, c in ops.items() if c},
        "top_processes": top,
    }


def cmd_stats(args: argparse.Namespace) -> int:
    stats = compute_stats(_iter_records(args.input, lenient=args.lenient))
    dest = _open_out_text(args.output)
    try:
        json.dump(stats, dest, indent=2, sort_keys=False)
        dest.write("\n")
    finally:
        _close(dest, args.output)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sysflow", description="Flow-centric system telemetry toolchain."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic raw trace")
    p.add_argument("--profile", required=True, choices=sorted(genmod.PROFILES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="output path for raw JSON lines")
    p.add_argument("--n-ops", type=int, default=None, help="db: I/O syscall count")
    p.add_argument("--duration-s", type=float, default=None, help="db: trace length in seconds")
    p.add_argument("--n-conns", type=int, default=None, help="web: connection count")
    p.add_argument("--tid-handoff", type=int, default=None, choices=(1, 2, 3),
                   help="web: threads touching each connection")
    p.add_argument("--n-threads", type=int, default=None, help="threads: thread count")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("aggregate", help="fold a raw trace into flow records")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.add_argument("--timeout-secs", type=float, default=None,
                   help=f"flow export window (default {os.environ.get('SF_FLOW_TIMEOUT_SECS', '30')}s)")
    p.add_argument("--format", choices=("binary", "jsonl"), default="binary")
    p.add_argument("--compression", choices=("deflate", "none"), default="deflate")
    p.add_argument("--orphan-fd", choices=("drop", "fail"), default="drop")
    p.add_argument("--hostname", default="localhost")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("print", help="render a record stream")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.add_argument("--format", choices=("table", "jsonl"), default="table")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_print)

    p = sub.add_parser("policy", help="evaluate policies over a record stream")
    p.add_argument("policies", nargs="+", metavar="POLICY.sfp")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-", help="findings JSON lines")
    p.add_argument("--emit-tagged", default=None, metavar="OUT",
                   help="re-serialize the stream with tags applied")
    p.add_argument("--format", choices=("binary", "jsonl"), default="binary",
                   help="format of the tagged stream")
    p.add_argument("--compression", choices=("deflate", "none"), default="deflate")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("stats", help="summarize a record stream")
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except SysflowError as exc:
        print(f"sysflow: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"sysflow: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sysflow: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
