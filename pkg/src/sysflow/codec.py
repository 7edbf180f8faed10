"""Binary container format: block-framed, deflate-compressed records.

File layout:

    magic "SF1\\n" | version uvarint | codec uvarint | header record
    block*            where block = record_count uvarint
                                  | uncompressed_len uvarint
                                  | compressed_len uvarint
                                  | payload bytes
                                  | sync marker FF FF FF FF

Record encoding is a tag byte followed by the record's fields: integer
fields as zigzag varints, strings as uvarint length plus UTF-8 bytes,
and a trailing tag-string list.  Blocks pack whole records up to an
80 KiB uncompressed target; a record is never split across blocks.
Re-encoding a decoded file with the same options is byte-identical.
"""

from __future__ import annotations

import io
import zlib
from typing import BinaryIO, Iterable, Iterator

from . import varint
from .model import (
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
    OrderingError,
    Process,
    ProcessEvent,
    ProcessFlow,
    Proto,
    Record,
    SysflowError,
    validate_record,
)

MAGIC = b"SF1\n"
FORMAT_VERSION = 1
SYNC_MARKER = b"\xff\xff\xff\xff"
BLOCK_TARGET_BYTES = 80 * 1024
DEFLATE_LEVEL = 6

CODEC_NONE = 0
CODEC_DEFLATE = 1
_CODECS = {"none": CODEC_NONE, "deflate": CODEC_DEFLATE}

RECORD_TAGS: dict[type, int] = {
    Header: 0,
    Container: 1,
    Process: 2,
    File: 3,
    ProcessEvent: 4,
    ProcessFlow: 5,
    FileEvent: 6,
    FileFlow: 7,
    NetworkEvent: 8,
    NetworkFlow: 9,
}
TAG_TYPES = {tag: t for t, tag in RECORD_TAGS.items()}

# Wire field layout per record type, in write order.  Kinds: int (zigzag
# varint), str, optstr (presence byte + str), ctype/ftype/proto (enum
# ordinal as uvarint).  The trailing tags list is implicit on every record.
FIELD_SPECS: dict[type, tuple[tuple[str, str], ...]] = {
    Header: (
        ("version", "int"), ("hostname", "str"), ("distribution", "str"),
        ("kernel_version", "str"), ("exported_at", "int"),
    ),
    Container: (
        ("oid", "int"), ("ts", "int"), ("container_id", "str"),
        ("name", "str"), ("image", "str"), ("container_type", "ctype"),
    ),
    Process: (
        ("oid", "int"), ("ts", "int"), ("parent_oid", "int"),
        ("container_oid", "int"), ("pid", "int"), ("exe", "str"),
        ("args", "str"), ("uid", "int"), ("gid", "int"), ("created_ts", "int"),
    ),
    File: (
        ("oid", "int"), ("ts", "int"), ("path", "str"), ("file_type", "ftype"),
    ),
    ProcessEvent: (
        ("proc_oid", "int"), ("ts", "int"), ("tid", "int"),
        ("opflags", "int"), ("ret", "int"), ("args_delta", "optstr"),
    ),
    ProcessFlow: (
        ("proc_oid", "int"), ("start_ts", "int"), ("end_ts", "int"),
        ("tid", "int"), ("opflags", "int"),
        ("num_threads_cloned", "int"), ("num_threads_exited", "int"),
    ),
    FileEvent: (
        ("proc_oid", "int"), ("file_oid", "int"), ("ts", "int"),
        ("tid", "int"), ("opflags", "int"), ("new_file_oid", "int"),
        ("ret", "int"),
    ),
    FileFlow: (
        ("proc_oid", "int"), ("file_oid", "int"), ("start_ts", "int"),
        ("end_ts", "int"), ("tid", "int"), ("fd", "int"), ("opflags", "int"),
        ("num_reads", "int"), ("bytes_read", "int"),
        ("num_writes", "int"), ("bytes_written", "int"),
    ),
    NetworkEvent: (
        ("proc_oid", "int"), ("ts", "int"), ("tid", "int"),
        ("opflags", "int"), ("sip", "int"), ("sport", "int"),
        ("dip", "int"), ("dport", "int"), ("proto", "proto"),
    ),
    NetworkFlow: (
        ("proc_oid", "int"), ("start_ts", "int"), ("end_ts", "int"),
        ("tid", "int"), ("fd", "int"), ("sip", "int"), ("sport", "int"),
        ("dip", "int"), ("dport", "int"), ("proto", "proto"),
        ("opflags", "int"), ("num_sends", "int"), ("bytes_sent", "int"),
        ("num_recvs", "int"), ("bytes_received", "int"),
    ),
}

_CTYPE_ORD = {ContainerType.DOCKER: 0, ContainerType.LXC: 1, ContainerType.OTHER: 2}
_FTYPE_ORD = {
    FileType.REGULAR: 0, FileType.DIRECTORY: 1, FileType.PIPE: 2,
    FileType.UNIX_SOCKET: 3, FileType.DEVICE: 4,
}
_PROTO_ORD = {Proto.TCP: 6, Proto.UDP: 17}  # IANA protocol numbers
_ORD_CTYPE = {v: k for k, v in _CTYPE_ORD.items()}
_ORD_FTYPE = {v: k for k, v in _FTYPE_ORD.items()}
_ORD_PROTO = {v: k for k, v in _PROTO_ORD.items()}

# IntFlag would happily grow pseudo-members for unknown bits, so corrupt
# opflags must be caught by range before conversion
_OPFLAGS_MASK = sum(op.value for op in OpFlags)


class CodecError(SysflowError):
    """Malformed container data."""


class BadMagicError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


class UnknownTagError(CodecError):
    pass


def _encode_str(text: str, out: bytearray) -> None:
    data = text.encode("utf-8")
    varint.encode_unsigned(len(data), out)
    out.extend(data)


def encode_record(rec: Record) -> bytes:
    """Encode one record, validating it first."""
    validate_record(rec)
    t = type(rec)
    out = bytearray([RECORD_TAGS[t]])
    for name, kind in FIELD_SPECS[t]:
        value = getattr(rec, name)
        if kind == "int":
            varint.encode_signed(int(value), out)
        elif kind == "str":
            _encode_str(value, out)
        elif kind == "optstr":
            if value is None:
                out.append(0)
            else:
                out.append(1)
                _encode_str(value, out)
        elif kind == "ctype":
            varint.encode_unsigned(_CTYPE_ORD[value], out)
        elif kind == "ftype":
            varint.encode_unsigned(_FTYPE_ORD[value], out)
        else:
            varint.encode_unsigned(_PROTO_ORD[value], out)
    varint.encode_unsigned(len(rec.tags), out)
    for tag in rec.tags:
        _encode_str(tag, out)
    return bytes(out)


def _decode_str(buf: bytes, pos: int) -> tuple[str, int]:
    length, pos = varint.decode_unsigned(buf, pos)
    if pos + length > len(buf):
        raise TruncatedError(f"truncated string at byte offset {pos}")
    try:
        text = buf[pos:pos + length].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CodecError(f"invalid UTF-8 at byte offset {pos}") from exc
    return text, pos + length


def decode_record(buf: bytes, pos: int = 0) -> tuple[Record, int]:
    """Decode one record at pos; returns (record, new_pos)."""
    if pos >= len(buf):
        raise TruncatedError(f"truncated record at byte offset {pos}")
    tag = buf[pos]
    pos += 1
    t = TAG_TYPES.get(tag)
    if t is None:
        raise UnknownTagError(f"unknown record tag {tag} at byte offset {pos - 1}")
    kwargs = {}
    for name, kind in FIELD_SPECS[t]:
        if kind == "int":
            value, pos = varint.decode_signed(buf, pos)
            if name == "opflags":
                if value < 0 or value & ~_OPFLAGS_MASK:
                    raise CodecError(f"bad opflags {value} at byte offset {pos}")
                value = OpFlags(value)
        elif kind == "str":
            value, pos = _decode_str(buf, pos)
        elif kind == "optstr":
            if pos >= len(buf):
                raise TruncatedError(f"truncated record at byte offset {pos}")
            present = buf[pos]
            pos += 1
            value = None
            if present == 1:
                value, pos = _decode_str(buf, pos)
            elif present != 0:
                raise CodecError(f"bad optional marker {present} at byte offset {pos - 1}")
        else:
            ordval, pos = varint.decode_unsigned(buf, pos)
            table = {"ctype": _ORD_CTYPE, "ftype": _ORD_FTYPE, "proto": _ORD_PROTO}[kind]
            if ordval not in table:
                raise CodecError(f"bad {kind} ordinal {ordval} at byte offset {pos - 1}")
            value = table[ordval]
        kwargs[name] = value
    ntags, pos = varint.decode_unsigned(buf, pos)
    tags = []
    for _ in range(ntags):
        tag_str, pos = _decode_str(buf, pos)
        tags.append(tag_str)
    return t(**kwargs, tags=tuple(tags)), pos


class _RefTracker:
    """Enforces entity-before-referent ordering on write."""

    def __init__(self) -> None:
        self.seen: set[int] = set()
        self.index = 0

    def check(self, rec: Record) -> None:
        refs: tuple[int, ...]
        if isinstance(rec, Header):
            refs = ()
        elif isinstance(rec, Container):
            refs = ()
        elif isinstance(rec, Process):
            refs = (rec.parent_oid, rec.container_oid)
        elif isinstance(rec, File):
            refs = ()
        elif isinstance(rec, (ProcessEvent, ProcessFlow, NetworkEvent, NetworkFlow)):
            refs = (rec.proc_oid,)
        elif isinstance(rec, FileEvent):
            refs = (rec.proc_oid, rec.file_oid, rec.new_file_oid)
        else:  # FileFlow
            refs = (rec.proc_oid, rec.file_oid)
        for oid in refs:
            if oid and oid not in self.seen:
                raise OrderingError(
                    f"record {self.index} references oid {oid} before its entity"
                )
        if isinstance(rec, (Container, Process, File)):
            self.seen.add(rec.oid)
        self.index += 1


class SfWriter:
    """Incremental writer; records stream out in bounded-size blocks."""

    def __init__(
        self,
        dest: BinaryIO,
        header: Header,
        compression: str = "deflate",
        block_target_bytes: int = BLOCK_TARGET_BYTES,
    ) -> None:
        if compression not in _CODECS:
            raise ValueError(f"unknown compression {compression!r}")
        self._dest = dest
        self._codec = _CODECS[compression]
        self._target = block_target_bytes
        self._buf: list[bytes] = []
        self._buf_len = 0
        self._tracker = _RefTracker()
        self.bytes_written = 0
        self.records_written = 0
        head = bytearray(MAGIC)
        varint.encode_unsigned(FORMAT_VERSION, head)
        varint.encode_unsigned(self._codec, head)
        self._tracker.check(header)
        head.extend(encode_record(header))
        self._write(bytes(head))
        self.records_written = 1

    def _write(self, data: bytes) -> None:
        self._dest.write(data)
        self.bytes_written += len(data)

    def write(self, rec: Record) -> None:
        self._tracker.check(rec)
        encoded = encode_record(rec)
        if self._buf and self._buf_len + len(encoded) > self._target:
            self._flush_block()
        self._buf.append(encoded)
        self._buf_len += len(encoded)
        self.records_written += 1

    def _flush_block(self) -> None:
        payload = b"".join(self._buf)
        if self._codec == CODEC_DEFLATE:
            comp = zlib.compressobj(DEFLATE_LEVEL, zlib.DEFLATED, -15)
            packed = comp.compress(payload) + comp.flush()
        else:
            packed = payload
        head = bytearray()
        varint.encode_unsigned(len(self._buf), head)
        varint.encode_unsigned(len(payload), head)
        varint.encode_unsigned(len(packed), head)
        self._write(bytes(head))
        self._write(packed)
        self._write(SYNC_MARKER)
        self._buf = []
        self._buf_len = 0

    def close(self) -> None:
        if self._buf:
            self._flush_block()


def write_stream(
    records: Iterable[Record],
    dest: BinaryIO,
    compression: str = "deflate",
    block_target_bytes: int = BLOCK_TARGET_BYTES,
) -> int:
    """Write a full stream (header first); returns bytes written."""
    it = iter(records)
    try:
        header = next(it)
    except StopIteration:
        raise ValueError("stream needs at least a header record") from None
    if not isinstance(header, Header):
        raise OrderingError("first record must be the header")
    writer = SfWriter(dest, header, compression, block_target_bytes)
    for rec in it:
        if isinstance(rec, Header):
            raise OrderingError("header must appear exactly once, first")
        writer.write(rec)
    writer.close()
    return writer.bytes_written


class _Source:
    """Byte source that tracks the absolute offset for error messages."""

    def __init__(self, f: BinaryIO) -> None:
        self._f = f
        self.offset = 0

    def read(self, n: int) -> bytes:
        data = self._f.read(n)
        self.offset += len(data)
        return data

    def read_exact(self, n: int, what: str) -> bytes:
        data = self.read(n)
        if len(data) != n:
            raise TruncatedError(f"truncated {what} at byte offset {self.offset}")
        return data

    def read_uvarint(self, what: str) -> int:
        value = 0
        shift = 0
        while True:
            byte = self.read(1)
            if not byte:
                raise TruncatedError(f"truncated {what} at byte offset {self.offset}")
            b = byte[0]
            value |= (b & 0x7F) << shift
            if not b & 0x80:
                return value
            shift += 7
            if shift > 63:
                raise CodecError(f"oversized varint in {what} at byte offset {self.offset}")


def read_stream(src: BinaryIO, lenient: bool = False) -> Iterator[Record]:
    """Yield records from a binary container.

    In lenient mode an unknown record tag skips the rest of its block;
    all other corruption still raises.
    """
    s = _Source(src)
    magic = s.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    version = s.read_uvarint("version")
    if version != FORMAT_VERSION:
        raise CodecError(f"unsupported format version {version}")
    codec = s.read_uvarint("codec")
    if codec not in (CODEC_NONE, CODEC_DEFLATE):
        raise CodecError(f"unknown codec {codec}")
    header_buf = _read_raw_record(s)
    header, _ = decode_record(header_buf)
    if not isinstance(header, Header):
        raise CodecError("first record is not a header")
    yield header
    while True:
        first = s.read(1)
        if not first:
            return
        count = _continue_uvarint(s, first[0], "record count")
        uncompressed_len = s.read_uvarint("uncompressed length")
        compressed_len = s.read_uvarint("compressed length")
        block_start = s.offset
        packed = s.read_exact(compressed_len, "block payload")
        if codec == CODEC_DEFLATE:
            try:
                payload = zlib.decompress(packed, -15)
            except zlib.error as exc:
                raise CodecError(
                    f"bad deflate payload at byte offset {block_start}: {exc}"
                ) from exc
        else:
            payload = packed
        if len(payload) != uncompressed_len:
            raise CodecError(
                f"block at byte offset {block_start} declares {uncompressed_len} "
                f"bytes but holds {len(payload)}"
            )
        pos = 0
        for i in range(count):
            try:
                rec, pos = decode_record(payload, pos)
            except UnknownTagError:
                if lenient:
                    break
                raise
            except varint.VarintError as exc:
                raise TruncatedError(str(exc)) from exc
            yield rec
        else:
            if pos != len(payload):
                raise CodecError(
                    f"block at byte offset {block_start} has {len(payload) - pos} "
                    "trailing bytes"
                )
        sync = s.read_exact(len(SYNC_MARKER), "sync marker")
        if sync != SYNC_MARKER:
            raise CodecError(f"bad sync marker at byte offset {s.offset}")


def _continue_uvarint(s: _Source, first: int, what: str) -> int:
    value = first & 0x7F
    shift = 7
    b = first
    while b & 0x80:
        byte = s.read(1)
        if not byte:
            raise TruncatedError(f"truncated {what} at byte offset {s.offset}")
        b = byte[0]
        value |= (b & 0x7F) << shift
        shift += 7
        if shift > 70:
            raise CodecError(f"oversized varint in {what} at byte offset {s.offset}")
    return value


def _read_raw_record(s: _Source) -> bytes:
    """Read the uncompressed header record by decoding against a growing
    buffer until one full record parses."""
    buf = bytearray()
    while True:
        chunk = s.read(1)
        if not chunk:
            raise TruncatedError(f"truncated header record at byte offset {s.offset}")
        buf.extend(chunk)
        try:
            _, end = decode_record(bytes(buf))
        except (TruncatedError, varint.VarintError):
            continue
        except UnknownTagError:
            raise
        return bytes(buf[:end])


def read_file(path: str, lenient: bool = False) -> Iterator[Record]:
    with open(path, "rb") as f:
        yield from read_stream(f, lenient=lenient)


def dumps(records: Iterable[Record], compression: str = "deflate") -> bytes:
    out = io.BytesIO()
    write_stream(records, out, compression=compression)
    return out.getvalue()


def loads(data: bytes, lenient: bool = False) -> list[Record]:
    return list(read_stream(io.BytesIO(data), lenient=lenient))
