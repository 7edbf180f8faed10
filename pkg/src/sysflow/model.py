"""Core record types for flow-centric system telemetry.

A telemetry stream is a sequence of records: one header, entity records
(containers, processes, files) and behavior records (events and flows).
Entities carry stable object ids; behavior records reference entities by
oid instead of repeating their attributes.  Events describe a single
operation, flows summarize many operations on one resource over a time
window.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

# Timestamps are integer nanoseconds since the Unix epoch.
Timestamp = int

# Object id.  Assigned sequentially per session by the producer; 0 is the
# null reference (no parent, no container).
Oid = int


class SysflowError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SysflowError):
    """A record violates a structural invariant."""


class OrderingError(SysflowError):
    """A stream references an entity before it was emitted."""


class DanglingOidError(SysflowError):
    """A record references an oid with no matching entity."""


class OpFlags(enum.IntFlag):
    """Operation bitmap shared by events and flows.

    Bit positions are part of the wire format and must never change.
    """

    CLONE = 1 << 0
    EXEC = 1 << 1
    EXIT = 1 << 2
    SETUID = 1 << 3
    SETGID = 1 << 4
    BIND = 1 << 5
    LISTEN = 1 << 6
    MKDIR = 1 << 7
    RMDIR = 1 << 8
    UNLINK = 1 << 9
    SYMLINK = 1 << 10
    LINK = 1 << 11
    RENAME = 1 << 12
    CHMOD = 1 << 13
    CHOWN = 1 << 14
    MOUNT = 1 << 15
    UMOUNT = 1 << 16
    ACCEPT = 1 << 17
    CONNECT = 1 << 18
    SEND = 1 << 19
    RECV = 1 << 20
    SHUTDOWN = 1 << 21
    CLOSE = 1 << 22
    OPEN = 1 << 23
    READ = 1 << 24
    WRITE = 1 << 25
    SETNS = 1 << 26
    MMAP = 1 << 27


class ContainerType(enum.Enum):
    DOCKER = "docker"
    LXC = "lxc"
    OTHER = "other"


class FileType(enum.Enum):
    REGULAR = "regular"
    DIRECTORY = "directory"
    PIPE = "pipe"
    UNIX_SOCKET = "unix_socket"
    DEVICE = "device"


class Proto(enum.Enum):
    TCP = "tcp"
    UDP = "udp"


@dataclass(frozen=True)
class Header:
    version: int
    hostname: str
    distribution: str
    kernel_version: str
    exported_at: Timestamp
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Container:
    oid: Oid
    ts: Timestamp
    container_id: str
    name: str
    image: str
    container_type: ContainerType
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Process:
    oid: Oid
    ts: Timestamp
    parent_oid: Oid  # 0 when the parent was never observed
    container_oid: Oid  # 0 for host processes
    pid: int
    exe: str
    args: str
    uid: int
    gid: int
    created_ts: Timestamp
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class File:
    oid: Oid
    ts: Timestamp
    path: str
    file_type: FileType
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProcessEvent:
    proc_oid: Oid
    ts: Timestamp
    tid: int
    opflags: OpFlags
    ret: int
    args_delta: str | None = None  # new uid/gid or exec command line
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class FileEvent:
    proc_oid: Oid
    file_oid: Oid
    ts: Timestamp
    tid: int
    opflags: OpFlags
    new_file_oid: Oid = 0  # rename/link destination
    ret: int = 0
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class NetworkEvent:
    proc_oid: Oid
    ts: Timestamp
    tid: int
    opflags: OpFlags
    sip: int  # IPv4 as unsigned 32-bit int
    sport: int
    dip: int
    dport: int
    proto: Proto
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProcessFlow:
    proc_oid: Oid
    start_ts: Timestamp
    end_ts: Timestamp
    tid: int
    opflags: OpFlags
    num_threads_cloned: int
    num_threads_exited: int
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class FileFlow:
    proc_oid: Oid
    file_oid: Oid
    start_ts: Timestamp
    end_ts: Timestamp
    tid: int
    fd: int
    opflags: OpFlags
    num_reads: int
    bytes_read: int
    num_writes: int
    bytes_written: int
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class NetworkFlow:
    proc_oid: Oid
    start_ts: Timestamp
    end_ts: Timestamp
    tid: int
    fd: int
    sip: int
    sport: int
    dip: int
    dport: int
    proto: Proto
    opflags: OpFlags
    num_sends: int
    bytes_sent: int
    num_recvs: int
    bytes_received: int
    tags: tuple[str, ...] = ()


Entity = Container | Process | File
Event = ProcessEvent | FileEvent | NetworkEvent
Flow = ProcessFlow | FileFlow | NetworkFlow
Record = Header | Entity | Event | Flow

ENTITY_TYPES = (Container, Process, File)
EVENT_TYPES = (ProcessEvent, FileEvent, NetworkEvent)
FLOW_TYPES = (ProcessFlow, FileFlow, NetworkFlow)

# Two-letter codes used in rendered output and in the sf.type attribute.
TYPE_CODES = {
    ProcessEvent: "PE",
    ProcessFlow: "PF",
    FileEvent: "FE",
    FileFlow: "FF",
    NetworkEvent: "NE",
    NetworkFlow: "NF",
}

# Which operations may appear on which record type.
ALLOWED_OPS = {
    ProcessEvent: (
        OpFlags.CLONE | OpFlags.EXEC | OpFlags.EXIT | OpFlags.SETUID | OpFlags.SETGID
    ),
    NetworkEvent: OpFlags.BIND | OpFlags.LISTEN,
    FileEvent: (
        OpFlags.MKDIR | OpFlags.RMDIR | OpFlags.UNLINK | OpFlags.SYMLINK
        | OpFlags.LINK | OpFlags.RENAME | OpFlags.CHMOD | OpFlags.CHOWN
        | OpFlags.MOUNT | OpFlags.UMOUNT
    ),
    ProcessFlow: OpFlags.CLONE | OpFlags.EXIT,
    NetworkFlow: (
        OpFlags.ACCEPT | OpFlags.CONNECT | OpFlags.SEND | OpFlags.RECV
        | OpFlags.SHUTDOWN | OpFlags.CLOSE
    ),
    FileFlow: (
        OpFlags.OPEN | OpFlags.READ | OpFlags.WRITE | OpFlags.SETNS
        | OpFlags.MMAP | OpFlags.CLOSE
    ),
}

OPFLAGS_MAX = (1 << 28) - 1


def opflags_to_string(flags: OpFlags, record_type: type) -> str:
    """Render an op bitmap the way tabular output shows it.

    Events render as the single full op name.  File flows render the
    positional groups [O][R W N M][C], network flows [A C][S R H][C],
    groups joined by one space.  Process flows render full names.
    """
    flags = OpFlags(flags)
    if flags == 0:
        raise ValidationError("opflags must have at least one bit set")
    allowed = ALLOWED_OPS[record_type]
    bad = flags & ~allowed
    if bad:
        raise ValidationError(
            f"op {OpFlags(bad).name or int(bad)} not valid for {record_type.__name__}"
        )
    if record_type in EVENT_TYPES:
        if flags.bit_count() != 1:
            raise ValidationError("events carry exactly one op bit")
        return flags.name
    if record_type is ProcessFlow:
        return " ".join(f.name for f in (OpFlags.CLONE, OpFlags.EXIT) if f & flags)
    if record_type is FileFlow:
        groups = (
            (OpFlags.OPEN,),
            (OpFlags.READ, OpFlags.WRITE, OpFlags.SETNS, OpFlags.MMAP),
            (OpFlags.CLOSE,),
        )
        letters = {
            OpFlags.OPEN: "O", OpFlags.READ: "R", OpFlags.WRITE: "W",
            OpFlags.SETNS: "N", OpFlags.MMAP: "M", OpFlags.CLOSE: "C",
        }
    else:  # NetworkFlow
        groups = (
            (OpFlags.ACCEPT, OpFlags.CONNECT),
            (OpFlags.SEND, OpFlags.RECV, OpFlags.SHUTDOWN),
            (OpFlags.CLOSE,),
        )
        letters = {
            OpFlags.ACCEPT: "A", OpFlags.CONNECT: "C", OpFlags.SEND: "S",
            OpFlags.RECV: "R", OpFlags.SHUTDOWN: "H", OpFlags.CLOSE: "C",
        }
    parts = []
    for group in groups:
        text = "".join(letters[f] for f in group if f & flags)
        if text:
            parts.append(text)
    return " ".join(parts)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def validate_record(rec: Record) -> None:
    """Raise ValidationError when a record breaks a structural invariant."""
    t = type(rec)
    if t in TYPE_CODES:
        flags = OpFlags(rec.opflags)
        opflags_to_string(flags, t)  # bit-count and bit-ownership checks
        if t in FLOW_TYPES:
            _check(rec.start_ts <= rec.end_ts, "flow start_ts after end_ts")
    if t is Header:
        _check(rec.version >= 1, "header version must be >= 1")
    elif t in ENTITY_TYPES:
        _check(rec.oid >= 1, "entity oid must be >= 1")
        if t is Container:
            _check(bool(rec.container_id), "container_id must be non-empty")
        elif t is Process:
            _check(rec.pid >= 0, "pid must be >= 0")
        elif t is File:
            _check(bool(rec.path), "file path must be non-empty")
    else:
        _check(rec.proc_oid >= 1, "behavior record needs a proc_oid")
    if t is FileFlow:
        _check((rec.num_reads > 0) == bool(rec.opflags & OpFlags.READ),
               "READ bit must mirror num_reads > 0")
        _check((rec.num_writes > 0) == bool(rec.opflags & OpFlags.WRITE),
               "WRITE bit must mirror num_writes > 0")
        _check(rec.bytes_read >= 0 and rec.bytes_written >= 0,
               "byte counters must be non-negative")
    elif t is NetworkFlow:
        _check((rec.num_sends > 0) == bool(rec.opflags & OpFlags.SEND),
               "SEND bit must mirror num_sends > 0")
        _check((rec.num_recvs > 0) == bool(rec.opflags & OpFlags.RECV),
               "RECV bit must mirror num_recvs > 0")
        _check(0 <= rec.sport <= 65535 and 0 <= rec.dport <= 65535,
               "ports must fit in 16 bits")
    elif t is ProcessFlow:
        _check((rec.num_threads_cloned > 0) == bool(rec.opflags & OpFlags.CLONE),
               "CLONE bit must mirror num_threads_cloned > 0")
        _check((rec.num_threads_exited > 0) == bool(rec.opflags & OpFlags.EXIT),
               "EXIT bit must mirror num_threads_exited > 0")
