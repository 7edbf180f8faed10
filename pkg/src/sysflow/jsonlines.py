"""JSON-lines debug codec: one record per line, lossless round trip.

Field names match the record dataclasses; IPv4 addresses render as
dotted quads and enums as their lowercase names so the output is
greppable.  This codec trades size for readability; the binary
container is the interchange format.
"""

from __future__ import annotations

import json
from typing import Iterable, Iterator, TextIO

from .codec import _OPFLAGS_MASK, FIELD_SPECS, RECORD_TAGS
from .model import (
    ContainerType,
    FileType,
    OpFlags,
    Proto,
    Record,
    SysflowError,
    validate_record,
)
from .store import format_ip, parse_ip

_TYPE_NAMES = {
    t: "".join(
        f"_{c.lower()}" if c.isupper() else c for c in t.__name__
    ).lstrip("_")
    for t in RECORD_TAGS
}
_NAME_TYPES = {name: t for t, name in _TYPE_NAMES.items()}
_IP_FIELDS = {"sip", "dip"}


class JsonCodecError(SysflowError):
    """Malformed JSON-lines input."""


def record_to_obj(rec: Record) -> dict:
    t = type(rec)
    obj: dict = {"type": _TYPE_NAMES[t]}
    for name, kind in FIELD_SPECS[t]:
        value = getattr(rec, name)
        if kind == "int":
            if name in _IP_FIELDS:
                obj[name] = format_ip(value)
            else:
                obj[name] = int(value)
        elif kind in ("ctype", "ftype", "proto"):
            obj[name] = value.value
        else:
            obj[name] = value
    obj["tags"] = list(rec.tags)
    return obj


def obj_to_record(obj: dict) -> Record:
    if not isinstance(obj, dict):
        raise JsonCodecError("record must be a JSON object")
    type_name = obj.get("type")
    t = _NAME_TYPES.get(type_name)
    if t is None:
        raise JsonCodecError(f"unknown record type {type_name!r}")
    kwargs = {}
    for name, kind in FIELD_SPECS[t]:
        if name not in obj:
            raise JsonCodecError(f"{type_name} record missing field {name!r}")
        value = obj[name]
        try:
            if kind == "int":
                if name in _IP_FIELDS:
                    value = parse_ip(value)
                elif name == "opflags":
                    value = int(value)
                    if value < 0 or value & ~_OPFLAGS_MASK:
                        raise ValueError(f"unknown op bits in {value:#x}")
                    value = OpFlags(value)
                else:
                    value = int(value)
            elif kind == "str":
                if not isinstance(value, str):
                    raise JsonCodecError(f"field {name!r} must be a string")
            elif kind == "optstr":
                if value is not None and not isinstance(value, str):
                    raise JsonCodecError(f"field {name!r} must be a string or null")
            elif kind == "ctype":
                value = ContainerType(value)
            elif kind == "ftype":
                value = FileType(value)
            else:
                value = Proto(value)
        except (ValueError, TypeError) as exc:
            raise JsonCodecError(f"bad value for field {name!r}: {exc}") from exc
        kwargs[name] = value
    tags = obj.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(x, str) for x in tags):
        raise JsonCodecError("tags must be a list of strings")
    return t(**kwargs, tags=tuple(tags))


def record_to_json(rec: Record) -> str:
    return json.dumps(record_to_obj(rec), separators=(",", ":"), ensure_ascii=False)


def write_json_lines(records: Iterable[Record], dest: TextIO) -> int:
    n = 0
    for rec in records:
        validate_record(rec)
        dest.write(record_to_json(rec) + "\n")
        n += 1
    return n


def read_json_lines(src: TextIO) -> Iterator[Record]:
    for lineno, line in enumerate(src, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise JsonCodecError(f"line {lineno}: invalid JSON: {exc}") from exc
        try:
            yield obj_to_record(obj)
        except JsonCodecError as exc:
            raise JsonCodecError(f"line {lineno}: {exc}") from exc
