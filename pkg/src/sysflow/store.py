"""Entity resolution and the flat attribute view over behavior records.

Readers keep an EntityStore while scanning a stream; flatten() joins an
event or flow with its process, parent chain, container and file into a
FlatRecord that exposes the dotted sf.* attribute namespace used by
policies and by tabular output.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass

from .model import (
    Container,
    DanglingOidError,
    Event,
    File,
    FileEvent,
    FileFlow,
    Flow,
    NetworkEvent,
    NetworkFlow,
    Oid,
    OpFlags,
    Process,
    ProcessEvent,
    Record,
    TYPE_CODES,
    opflags_to_string,
)


class _Absent:
    """Singleton marker for attributes a record does not carry."""

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT = _Absent()


def format_ip(addr: int) -> str:
    return str(ipaddress.IPv4Address(addr))


def parse_ip(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


def command_line(proc: Process) -> str:
    return f"{proc.exe} {proc.args}" if proc.args else proc.exe


class EntityStore:
    """Oid index over the entities seen so far in a stream.

    Re-exported entities overwrite the previous version, so lookups always
    see the entity closest above the referencing record.
    """

    def __init__(self) -> None:
        self._entities: dict[Oid, Container | Process | File] = {}

    def add(self, rec: Record) -> None:
        if isinstance(rec, (Container, Process, File)):
            self._entities[rec.oid] = rec

    def get(self, oid: Oid) -> Container | Process | File:
        try:
            return self._entities[oid]
        except KeyError:
            raise DanglingOidError(f"no entity with oid {oid}") from None

    def process(self, oid: Oid) -> Process:
        ent = self.get(oid)
        if not isinstance(ent, Process):
            raise DanglingOidError(f"oid {oid} is not a process")
        return ent

    def ancestors(self, proc: Process) -> list[Process]:
        """Parent chain of proc, nearest parent first, root last."""
        chain: list[Process] = []
        seen = {proc.oid}
        oid = proc.parent_oid
        while oid:
            if oid in seen:  # defensive: corrupt streams could form a loop
                break
            parent = self.process(oid)
            chain.append(parent)
            seen.add(oid)
            oid = parent.parent_oid
        return chain


# Attribute namespace: name -> value kind ("str", "int", "strlist").
ATTRIBUTES = {
    "sf.type": "str",
    "sf.opflags": "str",
    "sf.ts": "int",
    "sf.endts": "int",
    "sf.proc.oid": "int",
    "sf.proc.pid": "int",
    "sf.proc.tid": "int",
    "sf.proc.exe": "str",
    "sf.proc.args": "str",
    "sf.proc.uid": "int",
    "sf.proc.gid": "int",
    "sf.proc.achain": "strlist",
    "sf.pproc.exe": "str",
    "sf.pproc.pid": "int",
    "sf.file.path": "str",
    "sf.file.type": "str",
    "sf.net.sip": "str",
    "sf.net.sport": "int",
    "sf.net.dip": "str",
    "sf.net.dport": "int",
    "sf.net.proto": "str",
    "sf.flow.fd": "int",
    "sf.flow.rops": "int",
    "sf.flow.rbytes": "int",
    "sf.flow.wops": "int",
    "sf.flow.wbytes": "int",
    "sf.container.id": "str",
    "sf.container.name": "str",
    "sf.container.image": "str",
}


@dataclass
class FlatRecord:
    """Read-only attribute view of one event or flow.

    The ancestor chain is resolved lazily on first access.  A process
    exit event deliberately resolves its image attributes (sf.proc.exe,
    sf.proc.args, sf.proc.achain, sf.pproc.*) as absent: the process is
    done acting, and matching on its image at exit would alert twice per
    process lifetime.
    """

    record: Event | Flow
    proc: Process
    parent: Process | None
    container: Container | None
    file: File | None
    _store: EntityStore
    _achain: list[str] | None = None

    def _is_exit_event(self) -> bool:
        return (
            isinstance(self.record, ProcessEvent)
            and bool(self.record.opflags & OpFlags.EXIT)
        )

    def achain(self, k: int | None = None):
        """Ancestor command lines; k-th ancestor (1-based) or the full
        chain root-last when k is omitted.  Placeholder parents whose
        image was never observed carry no command line and are skipped."""
        if k is not None and k < 1:
            raise ValueError("achain index is 1-based")
        if self._achain is None:
            self._achain = [
                command_line(p)
                for p in self._store.ancestors(self.proc)
                if p.exe
            ]
        if k is None:
            return list(self._achain) if self._achain else ABSENT
        if k > len(self._achain):
            return ABSENT
        return self._achain[k - 1]

    def get(self, name: str, k: int | None = None):
        """Resolve one sf.* attribute; ABSENT when the record lacks it."""
        rec = self.record
        if name == "sf.proc.achain":
            if self._is_exit_event():
                return ABSENT
            return self.achain(k)
        if k is not None:
            raise ValueError(f"{name} takes no index")
        if name not in ATTRIBUTES:
            raise KeyError(name)
        if name == "sf.type":
            return TYPE_CODES[type(rec)]
        if name == "sf.opflags":
            return opflags_to_string(rec.opflags, type(rec))
        if name == "sf.ts":
            return rec.ts if isinstance(rec, (ProcessEvent, FileEvent, NetworkEvent)) else rec.start_ts
        if name == "sf.endts":
            return ABSENT if isinstance(rec, (ProcessEvent, FileEvent, NetworkEvent)) else rec.end_ts
        if name.startswith("sf.proc.") or name.startswith("sf.pproc."):
            return self._proc_attr(name)
        if name.startswith("sf.file."):
            if self.file is None:
                return ABSENT
            return self.file.path if name == "sf.file.path" else self.file.file_type.value
        if name.startswith("sf.net."):
            return self._net_attr(name)
        if name.startswith("sf.flow."):
            return self._flow_attr(name)
        # sf.container.*
        if self.container is None:
            return ABSENT
        field = name.rsplit(".", 1)[1]
        return {
            "id": self.container.container_id,
            "name": self.container.name,
            "image": self.container.image,
        }[field]

    def _proc_attr(self, name: str):
        image_attrs = {"sf.proc.exe", "sf.proc.args", "sf.pproc.exe", "sf.pproc.pid"}
        if name in image_attrs and self._is_exit_event():
            return ABSENT
        if name == "sf.proc.oid":
            return self.proc.oid
        if name == "sf.proc.pid":
            return self.proc.pid
        if name == "sf.proc.tid":
            return self.record.tid
        if name == "sf.proc.exe":
            return self.proc.exe
        if name == "sf.proc.args":
            return self.proc.args
        if name == "sf.proc.uid":
            return self.proc.uid
        if name == "sf.proc.gid":
            return self.proc.gid
        if self.parent is None:
            return ABSENT
        return self.parent.exe if name == "sf.pproc.exe" else self.parent.pid

    def _net_attr(self, name: str):
        rec = self.record
        if not isinstance(rec, (NetworkEvent, NetworkFlow)):
            return ABSENT
        if name == "sf.net.sip":
            return format_ip(rec.sip)
        if name == "sf.net.sport":
            return rec.sport
        if name == "sf.net.dip":
            return format_ip(rec.dip)
        if name == "sf.net.dport":
            return rec.dport
        return rec.proto.value

    def _flow_attr(self, name: str):
        rec = self.record
        if name == "sf.flow.fd":
            return rec.fd if isinstance(rec, (FileFlow, NetworkFlow)) else ABSENT
        if isinstance(rec, FileFlow):
            return {
                "sf.flow.rops": rec.num_reads,
                "sf.flow.rbytes": rec.bytes_read,
                "sf.flow.wops": rec.num_writes,
                "sf.flow.wbytes": rec.bytes_written,
            }[name]
        if isinstance(rec, NetworkFlow):
            # reads map to receives, writes to sends
            return {
                "sf.flow.rops": rec.num_recvs,
                "sf.flow.rbytes": rec.bytes_received,
                "sf.flow.wops": rec.num_sends,
                "sf.flow.wbytes": rec.bytes_sent,
            }[name]
        return ABSENT


def flatten(rec: Event | Flow, store: EntityStore) -> FlatRecord:
    """Join a behavior record with its entities."""
    proc = store.process(rec.proc_oid)
    parent = store.process(proc.parent_oid) if proc.parent_oid else None
    container = store.get(proc.container_oid) if proc.container_oid else None
    if container is not None and not isinstance(container, Container):
        raise DanglingOidError(f"oid {proc.container_oid} is not a container")
    file = None
    if isinstance(rec, (FileEvent, FileFlow)) and rec.file_oid:
        f = store.get(rec.file_oid)
        if not isinstance(f, File):
            raise DanglingOidError(f"oid {rec.file_oid} is not a file")
        file = f
    return FlatRecord(rec, proc, parent, container, file, store)
