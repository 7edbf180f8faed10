"""Deterministic synthetic raw-trace generator.

Four profiles: a fixed container-compromise scenario (node server
hijacked into dropping and running an exfiltration script), and three
parameterized workload shapes used by compression and equivalence
tests: a database server hammering one file descriptor, a web server
churning through short connections with thread handoff, and a
thread-per-work-item storm.  Same profile, seed and params always
yield a byte-identical trace.
"""

from __future__ import annotations

import json
import random
from datetime import datetime, timezone
from typing import Callable, Iterator, TextIO

_NS_PER_MS = 1_000_000


def _epoch_ns(year: int, month: int, day: int, hour: int = 0, minute: int = 0) -> int:
    dt = datetime(year, month, day, hour, minute, tzinfo=timezone.utc)
    return int(dt.timestamp()) * 1_000_000_000


ATTACK_BASE_NS = _epoch_ns(2019, 4, 10, 16, 47)

SERVER_IP = "172.30.10.2"
ATTACKER_IP = "198.51.100.1"
MALWARE_IP = "203.0.113.7"
CNC_IP = "203.0.113.9"
STORAGE_IP = "10.0.0.5"

_CONTAINER = {
    "container_id": "7f3a9c41e8b2",
    "container_name": "node-js",
    "container_image": "node:12",
    "container_type": "docker",
}

_NODE = {"pid": 21847, "ppid": 1887, "exe": "node", "args": "app.js"}
_EXFIL = {"pid": 21849, "ppid": 21847, "exe": "/tmp/exfil.py", "args": ""}
_APT = {"pid": 21851, "ppid": 21849, "exe": "apt", "args": "install pip"}


def _ev(ts: int, proc: dict, syscall: str, **fields) -> dict:
    ev = {
        "ts": ts,
        "pid": proc["pid"],
        "tid": fields.pop("tid", proc["pid"]),
        "ppid": proc["ppid"],
        "exe": proc["exe"],
        "args": proc["args"],
        "uid": 0,
        "gid": 0,
        "syscall": syscall,
    }
    ev.update(proc.get("extra", {}))
    ev.update(fields)
    return ev


def _net(sip: str, sport: int, dip: str, dport: int) -> dict:
    return {"sip": sip, "sport": sport, "dip": dip, "dport": dport, "proto": "tcp"}


def gen_attack_table2(seed: int = 0) -> Iterator[dict]:
    """Container compromise: exact syscall sequence behind the 16-record
    reference trace.  The seed is accepted for interface uniformity; the
    scenario is fully fixed."""
    base = ATTACK_BASE_NS
    node = dict(_NODE, extra=_CONTAINER)
    exfil = dict(_EXFIL, extra=_CONTAINER)
    apt = dict(_APT, extra=_CONTAINER)
    ms = _NS_PER_MS
    events: list[dict] = []

    def at(off_ms: float, proc: dict, syscall: str, **fields) -> None:
        events.append(_ev(base + int(off_ms * ms), proc, syscall, **fields))

    at(5000, node, "execve", ret=0)
    at(10000, node, "openat", fd=3, path="/lib/gnu/libc.so", ret=3)
    at(12000, node, "read", fd=3, ret=832)
    at(15000, node, "close", fd=3, ret=0)
    at(20000, node, "mkdir", path="/tmp/log", file_type="directory", ret=0)
    at(40000, node, "openat", fd=4, path="/tmp/log/app.log", ret=4)
    for k in range(100):
        at(41000 + k * 273, node, "write", fd=4, ret=80)
    # attacker connects in over HTTPS
    at(96000, node, "accept", fd=5, ret=5, net=_net(ATTACKER_IP, 3522, SERVER_IP, 443))
    at(96500, node, "recv", fd=5, ret=80)
    at(97000, node, "send", fd=5, ret=500)
    # hijacked server pulls the script from the malware host
    at(98000, node, "connect", fd=6, ret=0, net=_net(SERVER_IP, 8353, MALWARE_IP, 2345))
    at(98400, node, "send", fd=6, ret=94)
    at(99000, node, "recv", fd=6, ret=1500)
    at(100000, node, "recv", fd=6, ret=1500)
    at(101000, node, "recv", fd=6, ret=1355)
    at(104000, node, "openat", fd=7, path="/tmp/exfil.py", ret=7)
    for k, size in enumerate((1000, 1000, 1000, 1000, 200, 50)):
        at(104300 + k * 300, node, "write", fd=7, ret=size)
    at(106000, node, "close", fd=7, ret=0)
    at(107000, exfil, "execve", ret=0)
    at(108000, apt, "execve", ret=0)
    at(110000, apt, "exit", ret=0)
    # object store search, then beaconing to command-and-control
    at(111000, exfil, "connect", fd=8, ret=0, net=_net(SERVER_IP, 8356, STORAGE_IP, 3000))
    at(111200, exfil, "send", fd=8, ret=34)
    at(111400, exfil, "recv", fd=8, ret=100)
    at(111600, exfil, "recv", fd=8, ret=65)
    at(111800, exfil, "close", fd=8, ret=0)
    at(112000, exfil, "connect", fd=9, ret=0, net=_net(SERVER_IP, 8357, CNC_IP, 4444))
    at(112200, exfil, "recv", fd=9, ret=46)
    at(112400, exfil, "send", fd=9, ret=100)
    at(112600, exfil, "send", fd=9, ret=88)
    at(112800, exfil, "close", fd=9, ret=0)
    at(113000, exfil, "exit", ret=0)
    for k in range(100):
        at(117000 + k * 230, node, "write", fd=4, ret=80)
    at(121000, node, "send", fd=5, ret=480)
    at(122000, node, "close", fd=6, ret=0)
    at(123000, node, "close", fd=5, ret=0)
    for k in range(50):
        at(150000 + k * 400, node, "write", fd=4, ret=80)
    at(172000, node, "close", fd=4, ret=0)
    at(185000, node, "exit", ret=0)

    events.sort(key=lambda e: e["ts"])
    yield from events


def gen_db(seed: int = 0, n_ops: int = 100_000, duration_s: float = 60.0) -> Iterator[dict]:
    """Database-like load: one long-lived handle, dense interleaved reads
    and writes, the handle never closed."""
    if n_ops < 0 or duration_s <= 0:
        raise ValueError("db profile needs n_ops >= 0 and duration_s > 0")
    rng = random.Random(f"db:{seed}")
    base = _epoch_ns(2019, 5, 1)
    proc = {"pid": 3001, "ppid": 1, "exe": "dbserverd", "args": "-D /var/lib/dbserver"}
    path = "/var/lib/dbserver/base/16384.dat"
    yield _ev(base, proc, "open", fd=3, path=path, ret=3)
    offsets = sorted(rng.uniform(0.0, duration_s) for _ in range(n_ops))
    for off in offsets:
        syscall = "read" if rng.random() < 0.5 else "write"
        size = rng.randrange(128, 8192)
        yield _ev(base + int(off * 1e9) + 1, proc, syscall, fd=3, ret=size)


def gen_web(seed: int = 0, n_conns: int = 1000, tid_handoff: int = 3) -> Iterator[dict]:
    """Web-server load: short connections, each accepted, served and
    closed, with the stages handed off across 1 to 3 threads."""
    if n_conns < 0 or tid_handoff not in (1, 2, 3):
        raise ValueError("web profile needs n_conns >= 0 and tid_handoff in 1..3")
    rng = random.Random(f"web:{seed}")
    base = _epoch_ns(2019, 5, 2)
    proc = {"pid": 2001, "ppid": 1, "exe": "httpd", "args": "-k start"}
    ms = _NS_PER_MS
    last_ts = base
    for k in range(n_conns):
        t0 = base + k * 5 * ms
        fd = 8 + (k % 512)
        sport = 1024 + (k % 64000)
        client = f"198.51.100.{1 + (k % 254)}"
        worker = 2002 + (k % 4)
        tid_a = 2001
        tid_b = worker if tid_handoff >= 2 else tid_a
        tid_c = 2006 if tid_handoff == 3 else tid_b
        net = _net(client, sport, SERVER_IP, 80)
        yield _ev(t0, proc, "accept", tid=tid_a, fd=fd, ret=fd, net=net)
        yield _ev(t0 + 1 * ms, proc, "recv", tid=tid_b, fd=fd, ret=rng.randrange(128, 2048))
        yield _ev(t0 + 2 * ms, proc, "send", tid=tid_b, fd=fd, ret=rng.randrange(512, 65536))
        yield _ev(t0 + 3 * ms, proc, "shutdown", tid=tid_b, fd=fd, ret=0)
        yield _ev(t0 + 4 * ms, proc, "close", tid=tid_c, fd=fd, ret=0)
        last_ts = t0 + 4 * ms
    yield _ev(last_ts + 10 * ms, proc, "exit", ret=0)


def gen_threads(seed: int = 0, n_threads: int = 5000) -> Iterator[dict]:
    """Thread-per-work-item storm: every thread created and destroyed
    inside one flow window."""
    if n_threads < 0:
        raise ValueError("threads profile needs n_threads >= 0")
    rng = random.Random(f"threads:{seed}")
    base = _epoch_ns(2019, 5, 3)
    proc = {"pid": 4001, "ppid": 1, "exe": "matrixd", "args": "--rows 4096"}
    yield _ev(base, proc, "execve", ret=0)
    ts = base
    for k in range(n_threads):
        new_tid = 4002 + k
        ts += rng.randrange(500_000, 1_500_000)
        yield _ev(ts, proc, "clone", tid=4001, thread_flag=True, ret=new_tid)
        ts += rng.randrange(200_000, 400_000)
        yield _ev(ts, proc, "exit", tid=new_tid, thread_flag=True, ret=0)
    yield _ev(ts + 10 * _NS_PER_MS, proc, "exit", ret=0)


PROFILES: dict[str, Callable[..., Iterator[dict]]] = {
    "attack_table2": gen_attack_table2,
    "db": gen_db,
    "web": gen_web,
    "threads": gen_threads,
}


def generate(profile: str, seed: int = 0, **params) -> Iterator[dict]:
    """Generate one profile's raw events as JSON-ready dicts."""
    fn = PROFILES.get(profile)
    if fn is None:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return fn(seed=seed, **params)


def write_raw(events: Iterator[dict], dest: TextIO) -> int:
    n = 0
    for ev in events:
        dest.write(json.dumps(ev, separators=(",", ":")) + "\n")
        n += 1
    return n
