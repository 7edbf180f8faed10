"""Raw syscall-event ingest.

Raw traces are JSON lines, one syscall per line, as emitted by a capture
probe or by the trace generator.  parse_raw normalizes syscall name
variants (execve, openat, sendto, recvfrom, ...) onto the canonical op
set; read_raw_stream enforces non-decreasing timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, TextIO

from .model import ContainerType, FileType, OpFlags, Proto, SysflowError
from .store import parse_ip


class IngestError(SysflowError):
    """Malformed raw input; message carries the line number."""


_ALIASES = {
    "execve": "exec",
    "openat": "open",
    "creat": "open",
    "sendto": "send",
    "sendmsg": "send",
    "recvfrom": "recv",
    "recvmsg": "recv",
    "accept4": "accept",
    "fork": "clone",
    "vfork": "clone",
}

SYSCALL_OPS = {
    "clone": OpFlags.CLONE,
    "exec": OpFlags.EXEC,
    "exit": OpFlags.EXIT,
    "setuid": OpFlags.SETUID,
    "setgid": OpFlags.SETGID,
    "bind": OpFlags.BIND,
    "listen": OpFlags.LISTEN,
    "mkdir": OpFlags.MKDIR,
    "rmdir": OpFlags.RMDIR,
    "unlink": OpFlags.UNLINK,
    "symlink": OpFlags.SYMLINK,
    "link": OpFlags.LINK,
    "rename": OpFlags.RENAME,
    "chmod": OpFlags.CHMOD,
    "chown": OpFlags.CHOWN,
    "mount": OpFlags.MOUNT,
    "umount": OpFlags.UMOUNT,
    "accept": OpFlags.ACCEPT,
    "connect": OpFlags.CONNECT,
    "send": OpFlags.SEND,
    "recv": OpFlags.RECV,
    "shutdown": OpFlags.SHUTDOWN,
    "close": OpFlags.CLOSE,
    "open": OpFlags.OPEN,
    "read": OpFlags.READ,
    "write": OpFlags.WRITE,
    "setns": OpFlags.SETNS,
    "mmap": OpFlags.MMAP,
}


@dataclass(frozen=True)
class NetTuple:
    sip: int
    sport: int
    dip: int
    dport: int
    proto: Proto


@dataclass(frozen=True)
class RawEvent:
    ts: int
    pid: int
    tid: int
    ppid: int
    exe: str
    args: str
    uid: int
    gid: int
    op: OpFlags
    syscall: str
    ret: int = 0
    fd: int | None = None
    path: str | None = None
    file_type: FileType = FileType.REGULAR
    net: NetTuple | None = None
    thread_flag: bool = False
    container_id: str | None = None
    container_name: str = ""
    container_image: str = ""
    container_type: ContainerType = ContainerType.DOCKER
    dest_path: str | None = None  # rename/link target


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise IngestError(f"{where}: missing field {key!r}")
    return obj[key]


def parse_raw(line: str, lineno: int = 0) -> RawEvent:
    where = f"line {lineno}" if lineno else "raw event"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{where}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise IngestError(f"{where}: event must be a JSON object")
    syscall = str(_require(obj, "syscall", where))
    name = _ALIASES.get(syscall, syscall)
    op = SYSCALL_OPS.get(name)
    if op is None:
        raise IngestError(f"{where}: unknown syscall {syscall!r}")
    try:
        ts = int(_require(obj, "ts", where))
        pid = int(_require(obj, "pid", where))
        tid = int(obj.get("tid", pid))
        net = None
        if obj.get("net") is not None:
            n = obj["net"]
            net = NetTuple(
                sip=parse_ip(_require(n, "sip", where)),
                sport=int(_require(n, "sport", where)),
                dip=parse_ip(_require(n, "dip", where)),
                dport=int(_require(n, "dport", where)),
                proto=Proto(n.get("proto", "tcp")),
            )
        event = RawEvent(
            ts=ts,
            pid=pid,
            tid=tid,
            ppid=int(obj.get("ppid", 0)),
            exe=str(obj.get("exe", "")),
            args=str(obj.get("args", "")),
            uid=int(obj.get("uid", 0)),
            gid=int(obj.get("gid", 0)),
            op=op,
            syscall=name,
            ret=int(obj.get("ret", 0)),
            fd=int(obj["fd"]) if obj.get("fd") is not None else None,
            path=obj.get("path"),
            file_type=FileType(obj.get("file_type", "regular")),
            net=net,
            thread_flag=bool(obj.get("thread_flag", False)),
            container_id=obj.get("container_id"),
            container_name=str(obj.get("container_name", "")),
            container_image=str(obj.get("container_image", "")),
            container_type=ContainerType(obj.get("container_type", "docker")),
            dest_path=obj.get("dest_path"),
        )
    except (ValueError, TypeError) as exc:
        raise IngestError(f"{where}: bad field value: {exc}") from exc
    if event.ts < 0:
        raise IngestError(f"{where}: negative timestamp")
    return event


def read_raw_stream(src: TextIO) -> Iterator[RawEvent]:
    """Parse raw events, enforcing non-decreasing timestamps."""
    last_ts = None
    for lineno, line in enumerate(src, start=1):
        if not line.strip():
            continue
        event = parse_raw(line, lineno)
        if last_ts is not None and event.ts < last_ts:
            raise IngestError(
                f"line {lineno}: timestamp {event.ts} precedes {last_ts}; "
                "raw input must be time-ordered"
            )
        last_ts = event.ts
        yield event
