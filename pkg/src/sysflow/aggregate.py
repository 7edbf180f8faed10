"""Streaming aggregation of raw syscall events into entities, events and
flows.

Single-op lifecycle events pass through as event records.  Repetitive
operations fold into flow state keyed by (process, thread, resource,
fd); process flows are keyed by process alone so one record summarizes
all thread activity.  A flow is exported when its resource is closed,
when its process exits, at end of input, or when an event-time window
expires: before each incoming event, any flow whose current window is
older than the flow timeout is emitted and reset to dormant.  A dormant
flow that sees new activity starts a fresh window at that op's
timestamp, so an idle flow is never exported twice.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, TextIO

from .codec import FORMAT_VERSION, SfWriter
from .ingest import NetTuple, RawEvent, read_raw_stream
from .jsonlines import write_json_lines
from .model import (
    Container,
    File,
    FileEvent,
    FileFlow,
    FileType,
    Header,
    NetworkEvent,
    NetworkFlow,
    OpFlags,
    Process,
    ProcessEvent,
    ProcessFlow,
    Record,
    SysflowError,
)

DEFAULT_FLOW_TIMEOUT_SECS = 30
TIMEOUT_ENV_VAR = "SF_FLOW_TIMEOUT_SECS"

_NS = 1_000_000_000

_PROC_EVENT_OPS = (
    OpFlags.CLONE | OpFlags.EXEC | OpFlags.EXIT | OpFlags.SETUID | OpFlags.SETGID
)
_NET_EVENT_OPS = OpFlags.BIND | OpFlags.LISTEN
_FILE_EVENT_OPS = (
    OpFlags.MKDIR | OpFlags.RMDIR | OpFlags.UNLINK | OpFlags.SYMLINK | OpFlags.LINK
    | OpFlags.RENAME | OpFlags.CHMOD | OpFlags.CHOWN | OpFlags.MOUNT | OpFlags.UMOUNT
)
_FILE_FLOW_OPS = OpFlags.OPEN | OpFlags.READ | OpFlags.WRITE | OpFlags.SETNS | OpFlags.MMAP
_NET_FLOW_OPS = OpFlags.ACCEPT | OpFlags.CONNECT | OpFlags.SEND | OpFlags.RECV | OpFlags.SHUTDOWN


class AggregateError(SysflowError):
    """Raw input that cannot be folded into flows."""


def default_flow_timeout_ns() -> int:
    raw = os.environ.get(TIMEOUT_ENV_VAR)
    if raw is not None:
        try:
            secs = float(raw)
        except ValueError:
            raise AggregateError(f"{TIMEOUT_ENV_VAR} must be a number, got {raw!r}")
        if secs <= 0:
            raise AggregateError(f"{TIMEOUT_ENV_VAR} must be positive")
        return int(secs * _NS)
    return DEFAULT_FLOW_TIMEOUT_SECS * _NS


@dataclass
class AggregatorConfig:
    flow_timeout_ns: int = field(default_factory=default_flow_timeout_ns)
    orphan_fd: str = "drop"  # or "fail"
    max_flow_states: int = 1_000_000
    hostname: str = "localhost"
    distribution: str = "linux"
    kernel_version: str = ""

    def __post_init__(self) -> None:
        if self.orphan_fd not in ("drop", "fail"):
            raise ValueError("orphan_fd must be 'drop' or 'fail'")
        if self.flow_timeout_ns <= 0:
            raise ValueError("flow timeout must be positive")


@dataclass
class AggregateStats:
    raw_events: int = 0
    records: int = 0
    bytes_written: int = 0

    @property
    def ratio(self) -> float:
        return self.raw_events / self.records if self.records else 0.0


@dataclass
class _ProcState:
    oid: int
    pid: int
    exe: str
    args: str
    uid: int
    gid: int
    created_ts: int
    parent_oid: int
    container_oid: int


@dataclass
class _FlowState:
    kind: str  # "file", "net" or "proc"
    proc_oid: int
    tid: int
    fd: int = -1
    file_oid: int = 0
    net: NetTuple | None = None
    window_start: int | None = None  # None = dormant
    last_ts: int = 0
    opflags: OpFlags = OpFlags(0)
    rops: int = 0
    rbytes: int = 0
    wops: int = 0
    wbytes: int = 0
    exported_once: bool = False

    def touch(self, ts: int, op: OpFlags) -> None:
        if self.window_start is None:
            self.window_start = ts
        self.last_ts = ts
        self.opflags |= op

    def reset(self) -> None:
        self.window_start = None
        self.opflags = OpFlags(0)
        self.rops = self.rbytes = self.wops = self.wbytes = 0


class Aggregator:
    """Deterministic streaming state machine over time-ordered raw events."""

    def __init__(self, config: AggregatorConfig | None = None) -> None:
        self.config = config or AggregatorConfig()
        self._next_oid = 1
        self._containers: dict[str, int] = {}
        self._procs: dict[int, _ProcState] = {}
        self._files: dict[str, int] = {}  # live path generation -> file oid
        self._fds: dict[tuple[int, int], tuple[str, object]] = {}
        self._flows: dict[tuple, _FlowState] = {}
        self._last_ts: int | None = None

    def _alloc_oid(self) -> int:
        oid = self._next_oid
        self._next_oid += 1
        return oid

    # -- entity management -------------------------------------------------

    def _ensure_container(self, raw: RawEvent, out: list[Record]) -> int:
        if not raw.container_id:
            return 0
        oid = self._containers.get(raw.container_id)
        if oid is None:
            oid = self._alloc_oid()
            self._containers[raw.container_id] = oid
            out.append(Container(
                oid=oid, ts=raw.ts, container_id=raw.container_id,
                name=raw.container_name, image=raw.container_image,
                container_type=raw.container_type,
            ))
        return oid

    def _emit_proc_entity(self, ps: _ProcState, ts: int, out: list[Record]) -> None:
        out.append(Process(
            oid=ps.oid, ts=ts, parent_oid=ps.parent_oid,
            container_oid=ps.container_oid, pid=ps.pid, exe=ps.exe,
            args=ps.args, uid=ps.uid, gid=ps.gid, created_ts=ps.created_ts,
        ))

    def _ensure_process(self, raw: RawEvent, out: list[Record]) -> _ProcState:
        ps = self._procs.get(raw.pid)
        if ps is None:
            parent_oid = 0
            if raw.ppid:
                pps = self._procs.get(raw.ppid)
                if pps is None:
                    # parent never observed directly: record a stub so the
                    # ancestry chain still resolves its pid
                    pps = _ProcState(
                        oid=self._alloc_oid(), pid=raw.ppid, exe="", args="",
                        uid=0, gid=0, created_ts=raw.ts, parent_oid=0,
                        container_oid=0,
                    )
                    self._procs[raw.ppid] = pps
                    self._emit_proc_entity(pps, raw.ts, out)
                parent_oid = pps.oid
            container_oid = self._ensure_container(raw, out)
            ps = _ProcState(
                oid=self._alloc_oid(), pid=raw.pid, exe=raw.exe, args=raw.args,
                uid=raw.uid, gid=raw.gid, created_ts=raw.ts,
                parent_oid=parent_oid, container_oid=container_oid,
            )
            self._procs[raw.pid] = ps
            self._emit_proc_entity(ps, raw.ts, out)
            return ps
        if raw.op == OpFlags.EXEC:
            if (ps.exe, ps.args, ps.uid, ps.gid) != (raw.exe, raw.args, raw.uid, raw.gid):
                ps.exe, ps.args, ps.uid, ps.gid = raw.exe, raw.args, raw.uid, raw.gid
                self._emit_proc_entity(ps, raw.ts, out)
        elif raw.op in (OpFlags.SETUID, OpFlags.SETGID):
            if (ps.uid, ps.gid) != (raw.uid, raw.gid):
                ps.uid, ps.gid = raw.uid, raw.gid
                self._emit_proc_entity(ps, raw.ts, out)
        return ps

    def _ensure_file(self, path: str, ftype: FileType, ts: int, out: list[Record]) -> int:
        oid = self._files.get(path)
        if oid is None:
            oid = self._alloc_oid()
            self._files[path] = oid
            out.append(File(oid=oid, ts=ts, path=path, file_type=ftype))
        return oid

    # -- flow state --------------------------------------------------------

    def _file_key(self, ps: _ProcState, tid: int, file_oid: int, fd: int) -> tuple:
        return ("file", ps.oid, tid, file_oid, fd)

    def _net_key(self, ps: _ProcState, tid: int, net: NetTuple, fd: int) -> tuple:
        return ("net", ps.oid, tid, net, fd)

    def _get_flow(self, key: tuple, make: _FlowState) -> _FlowState:
        st = self._flows.get(key)
        if st is None:
            if len(self._flows) >= self.config.max_flow_states:
                raise AggregateError(
                    f"live flow states exceed limit {self.config.max_flow_states}"
                )
            st = make
            self._flows[key] = st
        return st

    def _emit_flow(self, st: _FlowState, end_ts: int, out: list[Record]) -> None:
        if st.kind == "file":
            out.append(FileFlow(
                proc_oid=st.proc_oid, file_oid=st.file_oid,
                start_ts=st.window_start, end_ts=end_ts, tid=st.tid, fd=st.fd,
                opflags=st.opflags, num_reads=st.rops, bytes_read=st.rbytes,
                num_writes=st.wops, bytes_written=st.wbytes,
            ))
        elif st.kind == "net":
            n = st.net
            out.append(NetworkFlow(
                proc_oid=st.proc_oid, start_ts=st.window_start, end_ts=end_ts,
                tid=st.tid, fd=st.fd, sip=n.sip, sport=n.sport, dip=n.dip,
                dport=n.dport, proto=n.proto, opflags=st.opflags,
                num_sends=st.wops, bytes_sent=st.wbytes,
                num_recvs=st.rops, bytes_received=st.rbytes,
            ))
        else:
            out.append(ProcessFlow(
                proc_oid=st.proc_oid, start_ts=st.window_start, end_ts=end_ts,
                tid=st.tid, opflags=st.opflags,
                num_threads_cloned=st.wops, num_threads_exited=st.rops,
            ))
        st.exported_once = True

    def _expire(self, now: int, out: list[Record]) -> None:
        timeout = self.config.flow_timeout_ns
        for st in self._flows.values():
            if st.window_start is not None and now - st.window_start >= timeout:
                self._emit_flow(st, st.last_ts, out)
                st.reset()

    def _flush_proc(self, proc_oid: int, out: list[Record]) -> None:
        dead = [k for k, st in self._flows.items() if st.proc_oid == proc_oid]
        for key in dead:
            st = self._flows[key]
            if st.window_start is not None:
                self._emit_flow(st, st.last_ts, out)
            del self._flows[key]

    # -- event routing -----------------------------------------------------

    def process_event(self, raw: RawEvent) -> list[Record]:
        if self._last_ts is not None and raw.ts < self._last_ts:
            raise AggregateError(
                f"timestamp {raw.ts} precedes {self._last_ts}; input must be time-ordered"
            )
        self._last_ts = raw.ts
        out: list[Record] = []
        self._expire(raw.ts, out)
        ps = self._ensure_process(raw, out)
        op = raw.op
        if op & _PROC_EVENT_OPS:
            self._route_proc(raw, ps, out)
        elif op & _NET_EVENT_OPS:
            self._route_net_event(raw, ps, out)
        elif op & _FILE_EVENT_OPS:
            self._route_file_event(raw, ps, out)
        elif op & _FILE_FLOW_OPS:
            self._route_file_flow(raw, ps, out)
        elif op & _NET_FLOW_OPS:
            self._route_net_flow(raw, ps, out)
        else:  # CLOSE
            self._route_close(raw, ps, out)
        return out

    def _is_thread_event(self, raw: RawEvent) -> bool:
        return raw.thread_flag or raw.tid != raw.pid

    def _route_proc(self, raw: RawEvent, ps: _ProcState, out: list[Record]) -> None:
        op = raw.op
        if op == OpFlags.CLONE and raw.thread_flag:
            st = self._get_flow(("proc", ps.oid), _FlowState("proc", ps.oid, raw.tid))
            st.touch(raw.ts, OpFlags.CLONE)
            st.wops += 1  # wops counts clones, rops counts exits
            return
        if op == OpFlags.EXIT and self._is_thread_event(raw):
            st = self._get_flow(("proc", ps.oid), _FlowState("proc", ps.oid, raw.tid))
            st.touch(raw.ts, OpFlags.EXIT)
            st.rops += 1
            return
        args_delta = None
        if op == OpFlags.EXEC:
            args_delta = f"{raw.exe} {raw.args}" if raw.args else raw.exe
        elif op == OpFlags.SETUID:
            args_delta = str(raw.uid)
        elif op == OpFlags.SETGID:
            args_delta = str(raw.gid)
        if op == OpFlags.EXIT:
            self._flush_proc(ps.oid, out)
        out.append(ProcessEvent(
            proc_oid=ps.oid, ts=raw.ts, tid=raw.tid, opflags=op,
            ret=raw.ret, args_delta=args_delta,
        ))
        if op == OpFlags.EXIT:
            del self._procs[raw.pid]
            for key in [k for k in self._fds if k[0] == raw.pid]:
                del self._fds[key]

    def _route_net_event(self, raw: RawEvent, ps: _ProcState, out: list[Record]) -> None:
        if raw.net is None:
            raise AggregateError(f"{raw.syscall} event without net tuple")
        n = raw.net
        out.append(NetworkEvent(
            proc_oid=ps.oid, ts=raw.ts, tid=raw.tid, opflags=raw.op,
            sip=n.sip, sport=n.sport, dip=n.dip, dport=n.dport, proto=n.proto,
        ))
        if raw.fd is not None and raw.fd >= 0:
            self._fds[(raw.pid, raw.fd)] = ("net", n)

    def _route_file_event(self, raw: RawEvent, ps: _ProcState, out: list[Record]) -> None:
        if raw.path is None:
            raise AggregateError(f"{raw.syscall} event without path")
        ftype = FileType.DIRECTORY if raw.op in (OpFlags.MKDIR, OpFlags.RMDIR) else raw.file_type
        file_oid = self._ensure_file(raw.path, ftype, raw.ts, out)
        new_file_oid = 0
        if raw.op in (OpFlags.RENAME, OpFlags.LINK, OpFlags.SYMLINK):
            if raw.dest_path is None:
                raise AggregateError(f"{raw.syscall} event without dest_path")
            # the destination starts a fresh path generation
            self._files.pop(raw.dest_path, None)
            new_file_oid = self._ensure_file(raw.dest_path, raw.file_type, raw.ts, out)
        out.append(FileEvent(
            proc_oid=ps.oid, file_oid=file_oid, ts=raw.ts, tid=raw.tid,
            opflags=raw.op, new_file_oid=new_file_oid, ret=raw.ret,
        ))
        if raw.op in (OpFlags.UNLINK, OpFlags.RMDIR, OpFlags.RENAME):
            # path generation ends; a later reuse of the name is a new file
            self._files.pop(raw.path, None)

    def _orphan(self, raw: RawEvent) -> None:
        if self.config.orphan_fd == "fail":
            raise AggregateError(
                f"{raw.syscall} on unknown fd {raw.fd} of pid {raw.pid}"
            )

    def _route_file_flow(self, raw: RawEvent, ps: _ProcState, out: list[Record]) -> None:
        op = raw.op
        fd = raw.fd if raw.fd is not None else -1
        if op == OpFlags.OPEN:
            if raw.path is None:
                raise AggregateError("open event without path")
            file_oid = self._ensure_file(raw.path, raw.file_type, raw.ts, out)
            if fd >= 0 and raw.ret >= 0:
                self._fds[(raw.pid, fd)] = ("file", file_oid)
            key = self._file_key(ps, raw.tid, file_oid, fd)
            st = self._get_flow(key, _FlowState("file", ps.oid, raw.tid, fd, file_oid))
            st.touch(raw.ts, OpFlags.OPEN)
            return
        res = self._fds.get((raw.pid, fd))
        if res is None:
            return self._orphan(raw)
        kind, handle = res
        if kind == "net":
            # read/write on a socket counts as network I/O
            if op == OpFlags.READ:
                return self._net_io(raw, ps, handle, OpFlags.RECV)
            if op == OpFlags.WRITE:
                return self._net_io(raw, ps, handle, OpFlags.SEND)
            return self._orphan(raw)
        key = self._file_key(ps, raw.tid, handle, fd)
        st = self._get_flow(key, _FlowState("file", ps.oid, raw.tid, fd, handle))
        st.touch(raw.ts, op)
        if op == OpFlags.READ:
            st.rops += 1
            st.rbytes += max(raw.ret, 0)
        elif op == OpFlags.WRITE:
            st.wops += 1
            st.wbytes += max(raw.ret, 0)

    def _net_io(self, raw: RawEvent, ps: _ProcState, net: NetTuple, op: OpFlags) -> None:
        fd = raw.fd if raw.fd is not None else -1
        key = self._net_key(ps, raw.tid, net, fd)
        st = self._get_flow(key, _FlowState("net", ps.oid, raw.tid, fd, net=net))
        st.touch(raw.ts, op)
        if op == OpFlags.RECV:
            st.rops += 1
            st.rbytes += max(raw.ret, 0)
        elif op == OpFlags.SEND:
            st.wops += 1
            st.wbytes += max(raw.ret, 0)

    def _route_net_flow(self, raw: RawEvent, ps: _ProcState, out: list[Record]) -> None:
        op = raw.op
        fd = raw.fd if raw.fd is not None else -1
        if op in (OpFlags.ACCEPT, OpFlags.CONNECT):
            if raw.net is None:
                raise AggregateError(f"{raw.syscall} event without net tuple")
            if fd >= 0 and raw.ret >= 0:
                self._fds[(raw.pid, fd)] = ("net", raw.net)
            key = self._net_key(ps, raw.tid, raw.net, fd)
            st = self._get_flow(key, _FlowState("net", ps.oid, raw.tid, fd, net=raw.net))
            st.touch(raw.ts, op)
            return
        res = self._fds.get((raw.pid, fd))
        if res is None or res[0] != "net":
            return self._orphan(raw)
        self._net_io(raw, ps, res[1], op)

    def _route_close(self, raw: RawEvent, ps: _ProcState, out: list[Record]) -> None:
        fd = raw.fd if raw.fd is not None else -1
        res = self._fds.pop((raw.pid, fd), None)
        if res is None:
            return self._orphan(raw)
        kind, handle = res
        if kind == "file":
            key = self._file_key(ps, raw.tid, handle, fd)
            st = self._flows.pop(key, None)
            if st is None:
                st = _FlowState("file", ps.oid, raw.tid, fd, handle)
        else:
            key = self._net_key(ps, raw.tid, handle, fd)
            st = self._flows.pop(key, None)
            if st is None:
                st = _FlowState("net", ps.oid, raw.tid, fd, net=handle)
        st.touch(raw.ts, OpFlags.CLOSE)
        self._emit_flow(st, raw.ts, out)

    def finalize(self) -> list[Record]:
        """Flush pending flows at end of input; dormant state is dropped."""
        out: list[Record] = []
        for st in self._flows.values():
            if st.window_start is not None:
                self._emit_flow(st, st.last_ts, out)
        self._flows.clear()
        self._fds.clear()
        return out


def aggregate(
    raw_events: Iterable[RawEvent],
    config: AggregatorConfig | None = None,
) -> Iterator[Record]:
    """Aggregate a time-ordered raw stream into a full record stream."""
    agg = Aggregator(config)
    it = iter(raw_events)
    try:
        first = next(it)
    except StopIteration:
        first = None
    yield Header(
        version=FORMAT_VERSION,
        hostname=agg.config.hostname,
        distribution=agg.config.distribution,
        kernel_version=agg.config.kernel_version,
        exported_at=first.ts if first else 0,
    )
    if first is None:
        return
    yield from agg.process_event(first)
    for raw in it:
        yield from agg.process_event(raw)
    yield from agg.finalize()


def aggregate_file(
    raw_src: TextIO,
    dest,
    config: AggregatorConfig | None = None,
    out_format: str = "binary",
    compression: str = "deflate",
) -> AggregateStats:
    """Aggregate a raw JSON-lines stream onto a destination file object."""
    stats = AggregateStats()

    def counted() -> Iterator[RawEvent]:
        for raw in read_raw_stream(raw_src):
            stats.raw_events += 1
            yield raw

    records = aggregate(counted(), config)
    if out_format == "binary":
        first = next(records)
        writer = SfWriter(dest, first, compression=compression)
        for rec in records:
            writer.write(rec)
        writer.close()
        stats.records = writer.records_written
        stats.bytes_written = writer.bytes_written
    elif out_format == "jsonl":
        stats.records = write_json_lines(records, dest)
    else:
        raise ValueError(f"unknown output format {out_format!r}")
    return stats
