"""Shared helpers for the test suite."""

from __future__ import annotations

import dataclasses
import json
import random

from sysflow.aggregate import AggregatorConfig, aggregate
from sysflow.gen import generate
from sysflow.ingest import parse_raw
from sysflow.model import (
    Container,
    ContainerType,
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
    Proto,
)

NS = 1_000_000_000


def gen_lines(profile: str, seed: int = 0, **params) -> list[str]:
    return [json.dumps(ev, separators=(",", ":")) for ev in generate(profile, seed=seed, **params)]


def parse_lines(lines: list[str]):
    return [parse_raw(line, i + 1) for i, line in enumerate(lines)]


def aggregate_lines(lines: list[str], timeout_secs: float = 30, orphan_fd: str = "drop"):
    cfg = AggregatorConfig(flow_timeout_ns=int(timeout_secs * NS), orphan_fd=orphan_fd)
    return list(aggregate(iter(parse_lines(lines)), cfg))


def ev(ts: int, syscall: str, pid: int = 100, tid: int | None = None, ppid: int = 1,
       exe: str = "worker", args: str = "", **kw) -> str:
    d = {
        "ts": ts, "pid": pid, "tid": tid if tid is not None else pid, "ppid": ppid,
        "exe": exe, "args": args, "uid": 0, "gid": 0, "syscall": syscall,
    }
    d.update(kw)
    return json.dumps(d)


def net(sip: str, sport: int, dip: str, dport: int, proto: str = "tcp") -> dict:
    return {"sip": sip, "sport": sport, "dip": dip, "dport": dport, "proto": proto}


# -- random record corpus ------------------------------------------------------

_WORDS = ["node", "app.js", "/usr/bin/python3", "データ", "café", "x" * 40, "", "a b c"]


def _rand_str(rng: random.Random) -> str:
    return rng.choice(_WORDS)


def _rand_ts(rng: random.Random) -> int:
    return rng.randrange(0, 2_000_000_000 * NS)


def _pick_flags(rng: random.Random, choices: list[OpFlags], required=()) -> OpFlags:
    flags = OpFlags(0)
    for f in required:
        flags |= f
    while flags == 0 or rng.random() < 0.4:
        flags |= rng.choice(choices)
    return flags


def make_random_record(rng: random.Random):
    """One structurally valid record of a random type."""
    kind = rng.randrange(10)
    tags = tuple(rng.choice(["T1087", "seen", "x"]) for _ in range(rng.randrange(3)))
    if kind == 0:
        return Header(version=1, hostname=_rand_str(rng), distribution="linux",
                      kernel_version=_rand_str(rng), exported_at=_rand_ts(rng), tags=tags)
    if kind == 1:
        return Container(oid=rng.randrange(1, 1 << 40), ts=_rand_ts(rng),
                         container_id="c" * 12, name=_rand_str(rng), image=_rand_str(rng),
                         container_type=rng.choice(list(ContainerType)), tags=tags)
    if kind == 2:
        return Process(oid=rng.randrange(1, 1 << 40), ts=_rand_ts(rng),
                       parent_oid=rng.randrange(0, 1 << 20), container_oid=rng.randrange(0, 4),
                       pid=rng.randrange(1 << 22), exe=_rand_str(rng), args=_rand_str(rng),
                       uid=rng.randrange(1 << 16), gid=rng.randrange(1 << 16),
                       created_ts=_rand_ts(rng), tags=tags)
    if kind == 3:
        return File(oid=rng.randrange(1, 1 << 40), ts=_rand_ts(rng),
                    path="/" + (_rand_str(rng) or "f"),
                    file_type=rng.choice(list(FileType)), tags=tags)
    proc_oid = rng.randrange(1, 1 << 30)
    ts = _rand_ts(rng)
    tid = rng.randrange(1 << 22)
    if kind == 4:
        op = rng.choice([OpFlags.CLONE, OpFlags.EXEC, OpFlags.EXIT, OpFlags.SETUID, OpFlags.SETGID])
        delta = None if rng.random() < 0.5 else _rand_str(rng)
        return ProcessEvent(proc_oid=proc_oid, ts=ts, tid=tid, opflags=op,
                            ret=rng.randrange(-20, 100), args_delta=delta, tags=tags)
    if kind == 5:
        op = rng.choice([OpFlags.MKDIR, OpFlags.RMDIR, OpFlags.UNLINK, OpFlags.SYMLINK,
                         OpFlags.LINK, OpFlags.RENAME, OpFlags.CHMOD, OpFlags.CHOWN,
                         OpFlags.MOUNT, OpFlags.UMOUNT])
        return FileEvent(proc_oid=proc_oid, file_oid=rng.randrange(1, 1 << 30), ts=ts,
                         tid=tid, opflags=op, new_file_oid=rng.randrange(0, 1 << 30),
                         ret=rng.randrange(-20, 2), tags=tags)
    if kind == 6:
        op = rng.choice([OpFlags.BIND, OpFlags.LISTEN])
        return NetworkEvent(proc_oid=proc_oid, ts=ts, tid=tid, opflags=op,
                            sip=rng.randrange(1 << 32), sport=rng.randrange(1 << 16),
                            dip=rng.randrange(1 << 32), dport=rng.randrange(1 << 16),
                            proto=rng.choice(list(Proto)), tags=tags)
    end_ts = ts + rng.randrange(0, 60 * NS)
    if kind == 7:
        flags = _pick_flags(rng, [OpFlags.CLONE, OpFlags.EXIT])
        return ProcessFlow(
            proc_oid=proc_oid, start_ts=ts, end_ts=end_ts, tid=tid, opflags=flags,
            num_threads_cloned=rng.randrange(1, 5000) if flags & OpFlags.CLONE else 0,
            num_threads_exited=rng.randrange(1, 5000) if flags & OpFlags.EXIT else 0,
            tags=tags)
    if kind == 8:
        flags = _pick_flags(rng, [OpFlags.OPEN, OpFlags.READ, OpFlags.WRITE,
                                  OpFlags.SETNS, OpFlags.MMAP, OpFlags.CLOSE])
        nr = rng.randrange(1, 100000) if flags & OpFlags.READ else 0
        nw = rng.randrange(1, 100000) if flags & OpFlags.WRITE else 0
        return FileFlow(proc_oid=proc_oid, file_oid=rng.randrange(1, 1 << 30),
                        start_ts=ts, end_ts=end_ts, tid=tid, fd=rng.randrange(-1, 1024),
                        opflags=flags, num_reads=nr,
                        bytes_read=rng.randrange(1 << 40) if nr else 0,
                        num_writes=nw, bytes_written=rng.randrange(1 << 40) if nw else 0,
                        tags=tags)
    flags = _pick_flags(rng, [OpFlags.ACCEPT, OpFlags.CONNECT, OpFlags.SEND,
                              OpFlags.RECV, OpFlags.SHUTDOWN, OpFlags.CLOSE])
    ns_ = rng.randrange(1, 100000) if flags & OpFlags.SEND else 0
    nr = rng.randrange(1, 100000) if flags & OpFlags.RECV else 0
    return NetworkFlow(proc_oid=proc_oid, start_ts=ts, end_ts=end_ts, tid=tid,
                       fd=rng.randrange(-1, 1024), sip=rng.randrange(1 << 32),
                       sport=rng.randrange(1 << 16), dip=rng.randrange(1 << 32),
                       dport=rng.randrange(1 << 16), proto=rng.choice(list(Proto)),
                       opflags=flags, num_sends=ns_,
                       bytes_sent=rng.randrange(1 << 40) if ns_ else 0,
                       num_recvs=nr, bytes_received=rng.randrange(1 << 40) if nr else 0,
                       tags=tags)


def make_random_stream(rng: random.Random, n: int = 200) -> list:
    """Header, an entity pool, then behavior records whose references
    all resolve within the stream."""
    recs: list = [Header(version=1, hostname="host", distribution="linux",
                         kernel_version="5.15.0", exported_at=_rand_ts(rng))]
    containers: list[Container] = []
    procs: list[Process] = []
    files: list[File] = []
    oid = 1
    for _ in range(rng.randrange(1, 3)):
        c = Container(oid=oid, ts=_rand_ts(rng), container_id=f"c{oid:011x}",
                      name=_rand_str(rng) or "box", image="img:1",
                      container_type=rng.choice(list(ContainerType)))
        containers.append(c)
        recs.append(c)
        oid += 1
    for _ in range(rng.randrange(2, 6)):
        p = Process(oid=oid, ts=_rand_ts(rng),
                    parent_oid=rng.choice([0] + [q.oid for q in procs]),
                    container_oid=rng.choice([0] + [c.oid for c in containers]),
                    pid=rng.randrange(1, 1 << 22), exe=_rand_str(rng) or "init",
                    args=_rand_str(rng), uid=rng.randrange(1 << 16),
                    gid=rng.randrange(1 << 16), created_ts=_rand_ts(rng))
        procs.append(p)
        recs.append(p)
        oid += 1
    for _ in range(rng.randrange(1, 6)):
        f = File(oid=oid, ts=_rand_ts(rng), path="/" + (_rand_str(rng) or "f"),
                 file_type=rng.choice(list(FileType)))
        files.append(f)
        recs.append(f)
        oid += 1
    while n > 0:
        rec = make_random_record(rng)
        if isinstance(rec, (Header, Container, Process, File)):
            continue
        kw: dict = {"proc_oid": rng.choice(procs).oid}
        if isinstance(rec, (FileEvent, FileFlow)):
            kw["file_oid"] = rng.choice(files).oid
        if isinstance(rec, FileEvent):
            kw["new_file_oid"] = rng.choice([0, rng.choice(files).oid])
        recs.append(dataclasses.replace(rec, **kw))
        n -= 1
    return recs


def assert_ordered(records: list) -> None:
    """Every oid reference must resolve to an entity emitted earlier."""
    seen: set[int] = set()
    for i, rec in enumerate(records):
        refs: tuple[int, ...] = ()
        if isinstance(rec, Process):
            refs = (rec.parent_oid, rec.container_oid)
        elif isinstance(rec, (ProcessEvent, ProcessFlow, NetworkEvent, NetworkFlow)):
            refs = (rec.proc_oid,)
        elif isinstance(rec, FileEvent):
            refs = (rec.proc_oid, rec.file_oid, rec.new_file_oid)
        elif isinstance(rec, FileFlow):
            refs = (rec.proc_oid, rec.file_oid)
        for r in refs:
            assert r == 0 or r in seen, f"record {i} references oid {r} before its entity"
        if isinstance(rec, (Container, Process, File)):
            seen.add(rec.oid)


# -- policy corpora ------------------------------------------------------------

PAPER_RULES = """\
match sf.proc.exe pmatch (apt, yum, dnf)
tag sf.file.path in (/etc/passwd, /etc/shadow) with [T1087]
match sf.proc.exe contains exfil.py show sf.proc.achain
"""

RULE_1 = "match sf.proc.exe pmatch (apt, yum, dnf)\n"
RULE_2 = "tag sf.file.path in (/etc/passwd, /etc/shadow) with [T1087]\n"
RULE_3 = "match sf.proc.exe contains exfil.py show sf.proc.achain\n"

SYNTHETIC_POLICIES = [
    "match sf.proc.exe = bash\n",
    "shells := (bash, sh, zsh)\nmatch sf.proc.exe in shells\n",
    "match sf.proc.achain(2) in (bash, sh)\n",
    "match sf.file.path startswith /etc and sf.flow.wops > 0\n",
    "match sf.opflags contains W or sf.opflags contains R\n",
    "match not sf.container.id exists\n",
    "is_shell := sf.proc.exe in (bash, sh)\nmatch is_shell and sf.file.path = /etc/shadow\n",
    "a := sf.proc.uid = 0\nb := a and sf.proc.gid = 0\nmatch b show sf.proc.exe, sf.proc.pid\n",
    "tag sf.net.dport in (4444, 2345) with [T1571, beacon]\n",
    "match sf.net.sport >= 1024 and sf.net.sport <= 2048\n",
    "match sf.proc.exe pmatch (apt, yum) or sf.proc.exe pmatch (pip, npm)\n",
    "match not not sf.file.path exists\n",
    "match sf.type = FF and sf.flow.rbytes > 1000000\n",
    'match sf.proc.args contains "install pip"\n',
    "p := sf.proc.exe = node\nq := sf.pproc.exe = node\nmatch p or q show sf.proc.achain(1)\n",
    "match sf.net.sport = sf.net.dport\n",
    "match sf.proc.achain in (node) show sf.proc.exe, sf.ts\n",
    "long := sf.endts > 100 and sf.ts < 200 \\\n  and sf.flow.fd >= 3\nmatch long\n",
    "match sf.container.name = node-js and sf.opflags = EXEC\n",
    "# leading comment\nwatched := (/tmp, /var/tmp)\nmatch sf.file.path pmatch watched # trailing\n",
]

MALFORMED_POLICIES = [
    "match sf.proc.bogus = 1\n",                      # unknown attribute
    "match sf.proc.exe in undeclared_list\n",         # unknown list name
    "match sf.proc.exe pmatch\n",                     # missing operand
    "match sf.proc.exe = \n",                         # dangling operator
    "tag sf.proc.exe = x\n",                          # tag without with
    "match sf.proc.achain(zero) in (a)\n",            # bad arity argument
    "a := b\nb := a\nmatch a\n",                      # macro cycle
    "match sf.proc.exe in (a, b\n",                   # unterminated list
    "match sf.flow.rops > lots\n",                    # non-numeric comparison
    "match and sf.proc.exe = x\n",                    # condition starts with operator
]
