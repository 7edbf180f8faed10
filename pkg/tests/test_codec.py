import io
import random

import pytest

import util
from sysflow.codec import (
    BLOCK_TARGET_BYTES,
    BadMagicError,
    CodecError,
    MAGIC,
    SYNC_MARKER,
    SfWriter,
    UnknownTagError,
    decode_record,
    dumps,
    encode_record,
    loads,
    write_stream,
)
from sysflow import varint
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
    OrderingError,
    Process,
    ProcessEvent,
    ProcessFlow,
    Proto,
)

HEADER = Header(1, "host", "linux", "5.15.0", 1234)

SAMPLE = [
    HEADER,
    Container(1, 10, "7f3a9c41e8b2", "node-js", "node:12", ContainerType.DOCKER),
    Process(2, 10, 0, 1, 1887, "node", "app.js", 1000, 1000, 5),
    Process(3, 11, 2, 1, 21847, "/tmp/exfil.py", "", 0, 0, 11, tags=("T1105",)),
    File(4, 12, "/var/log/app.log", FileType.REGULAR),
    File(5, 12, "/tmp/log", FileType.DIRECTORY),
    ProcessEvent(2, 13, 1887, OpFlags.EXEC, 0, "node app.js"),
    ProcessEvent(3, 14, 21847, OpFlags.EXIT, 0, None),
    FileEvent(2, 5, 15, 1887, OpFlags.MKDIR, 0, 0),
    NetworkEvent(2, 16, 1887, OpFlags.LISTEN, 0xC0A80001, 443, 0, 0, Proto.TCP),
    ProcessFlow(2, 17, 18, 1887, OpFlags.CLONE | OpFlags.EXIT, 7, 7),
    FileFlow(2, 4, 19, 21, 1887, 4, OpFlags.OPEN | OpFlags.READ | OpFlags.WRITE,
             3, 96, 2, 64),
    NetworkFlow(2, 22, 25, 1887, 5, 0xC6336401, 3522, 0xAC1E0A02, 443, Proto.TCP,
                OpFlags.ACCEPT | OpFlags.SEND | OpFlags.RECV | OpFlags.CLOSE,
                2, 980, 1, 80),
]


def test_record_round_trip_each_type():
    for rec in SAMPLE:
        buf = encode_record(rec)
        got, end = decode_record(buf)
        assert got == rec
        assert end == len(buf)


def test_record_round_trip_unicode_and_negative():
    rec = Process(9, -5, 0, 0, 1, "/usr/bin/データ", "café --x", 0, 0, -5)
    assert decode_record(encode_record(rec))[0] == rec


@pytest.mark.parametrize("compression", ["deflate", "none"])
def test_stream_round_trip(compression):
    data = dumps(SAMPLE, compression=compression)
    assert data[: len(MAGIC)] == MAGIC
    assert loads(data) == SAMPLE


@pytest.mark.parametrize("compression", ["deflate", "none"])
def test_canonical_reencode_is_byte_identical(compression):
    data = dumps(SAMPLE, compression=compression)
    assert dumps(loads(data), compression=compression) == data


def test_random_records_round_trip():
    rng = random.Random(99)
    for _ in range(300):
        rec = util.make_random_record(rng)
        assert decode_record(encode_record(rec))[0] == rec


def test_multi_block_layout():
    records = [HEADER] + [
        Process(i, 1, 0, 0, i, "p", "", 0, 0, 1) for i in range(1, 51)
    ]
    out = io.BytesIO()
    write_stream(records, out, compression="none", block_target_bytes=64)
    data = out.getvalue()
    # every record's bytes stay below 0x80, so raw payloads can't fake a marker
    assert data.count(SYNC_MARKER) > 1
    assert loads(data) == records


def test_single_block_by_default():
    data = dumps(SAMPLE, compression="none")
    assert data.count(SYNC_MARKER) == 1
    assert len(data) < BLOCK_TARGET_BYTES


def test_deflate_shrinks_repetitive_streams():
    import dataclasses
    flow = FileFlow(1, 2, 0, 1, 1, 3, OpFlags.READ, 100, 4096, 0, 0)
    records = [HEADER, Process(1, 0, 0, 0, 9, "db", "", 0, 0, 0),
               File(2, 0, "/data", FileType.REGULAR)]
    records += [dataclasses.replace(flow, start_ts=i, end_ts=i + 1)
                for i in range(10_000)]
    packed = dumps(records, compression="deflate")
    plain = dumps(records, compression="none")
    assert len(packed) < 0.2 * len(plain)
    assert loads(packed) == loads(plain) == records


def test_writer_counts_bytes_and_records():
    out = io.BytesIO()
    w = SfWriter(out, HEADER, compression="none")
    for rec in SAMPLE[1:]:
        w.write(rec)
    w.close()
    assert w.records_written == len(SAMPLE)
    assert w.bytes_written == len(out.getvalue())


def test_empty_stream_is_header_only():
    data = dumps([HEADER])
    assert loads(data) == [HEADER]


def test_write_requires_header_first():
    with pytest.raises(ValueError):
        dumps([])
    with pytest.raises(OrderingError):
        dumps([SAMPLE[1]])
    with pytest.raises(OrderingError):
        dumps([HEADER, HEADER])


def test_write_rejects_dangling_references():
    with pytest.raises(OrderingError):
        dumps([HEADER, ProcessEvent(7, 0, 0, OpFlags.EXEC, 0)])
    with pytest.raises(OrderingError):
        # file entity after the flow that references it
        dumps([
            HEADER,
            Process(1, 0, 0, 0, 9, "p", "", 0, 0, 0),
            FileFlow(1, 2, 0, 1, 9, 3, OpFlags.OPEN, 0, 0, 0, 0),
            File(2, 0, "/x", FileType.REGULAR),
        ])


def test_unknown_compression_name():
    with pytest.raises(ValueError):
        dumps(SAMPLE, compression="lz4")


def _prelude(codec: int = 0) -> bytearray:
    out = bytearray(MAGIC)
    varint.encode_unsigned(1, out)
    varint.encode_unsigned(codec, out)
    out.extend(encode_record(HEADER))
    return out


def _block(payload: bytes, count: int, uncompressed: int | None = None) -> bytes:
    out = bytearray()
    varint.encode_unsigned(count, out)
    varint.encode_unsigned(uncompressed if uncompressed is not None else len(payload), out)
    varint.encode_unsigned(len(payload), out)
    out.extend(payload)
    out.extend(SYNC_MARKER)
    return bytes(out)


def test_lenient_skips_unknown_tag_block_remainder():
    good = Process(1, 0, 0, 0, 9, "p", "", 0, 0, 0)
    payload = bytes([63]) + b"\x01\x02\x03" + encode_record(good)
    data = bytes(_prelude()) + _block(payload, count=2) + _block(encode_record(good), count=1)
    with pytest.raises(UnknownTagError):
        loads(data)
    assert loads(data, lenient=True) == [HEADER, good]


def test_bad_magic():
    with pytest.raises(BadMagicError):
        loads(b"NOPE" + b"\x00" * 8)


def test_unsupported_version():
    out = bytearray(MAGIC)
    varint.encode_unsigned(2, out)
    with pytest.raises(CodecError, match="version"):
        loads(bytes(out))


def test_unknown_codec_id():
    out = bytearray(MAGIC)
    varint.encode_unsigned(1, out)
    varint.encode_unsigned(9, out)
    with pytest.raises(CodecError, match="codec"):
        loads(bytes(out))


def test_first_record_must_be_header():
    out = bytearray(MAGIC)
    varint.encode_unsigned(1, out)
    varint.encode_unsigned(0, out)
    out.extend(encode_record(Process(1, 0, 0, 0, 9, "p", "", 0, 0, 0)))
    with pytest.raises(CodecError, match="header"):
        loads(bytes(out))


def test_block_trailing_bytes_detected():
    good = Process(1, 0, 0, 0, 9, "p", "", 0, 0, 0)
    payload = encode_record(good) + b"\x00\x00"
    data = bytes(_prelude()) + _block(payload, count=1)
    with pytest.raises(CodecError, match="trailing"):
        loads(data)


def test_block_length_mismatch_detected():
    good = Process(1, 0, 0, 0, 9, "p", "", 0, 0, 0)
    payload = encode_record(good)
    data = bytes(_prelude()) + _block(payload, count=1, uncompressed=len(payload) + 5)
    with pytest.raises(CodecError, match="declares"):
        loads(data)


def test_bad_sync_marker_detected():
    good = Process(1, 0, 0, 0, 9, "p", "", 0, 0, 0)
    block = bytearray(_block(encode_record(good), count=1))
    block[-1] = 0
    with pytest.raises(CodecError, match="sync"):
        loads(bytes(_prelude()) + bytes(block))


def test_bad_deflate_payload_detected():
    out = _prelude(codec=1)
    block = bytearray()
    varint.encode_unsigned(1, block)
    varint.encode_unsigned(10, block)
    varint.encode_unsigned(4, block)
    block.extend(b"\x00\x01\x02\x03")
    block.extend(SYNC_MARKER)
    with pytest.raises(CodecError, match="deflate"):
        loads(bytes(out) + bytes(block))


def test_invalid_utf8_in_string_field():
    rec = encode_record(File(1, 0, "/abc", FileType.REGULAR))
    bad = bytearray(rec)
    assert bad[rec.index(b"/abc")] == ord("/")
    bad[rec.index(b"/abc")] = 0xFF
    data = bytes(_prelude()) + _block(bytes(bad), count=1)
    with pytest.raises(CodecError, match="UTF-8"):
        loads(data)


def test_undefined_opflags_bits_rejected():
    rec = ProcessEvent(1, 0, 0, OpFlags.EXEC, 0)
    raw = bytearray(encode_record(rec))
    # tag, proc_oid, ts, tid are single bytes here; opflags follows
    flag_pos = 4
    assert varint.decode_signed(bytes(raw), flag_pos)[0] == int(OpFlags.EXEC)
    raw[flag_pos:flag_pos + 1] = b"\x80\x80\x80\x80\x40"  # a bit outside the op set
    with pytest.raises(CodecError, match="opflags"):
        decode_record(bytes(raw))


def test_truncated_record_errors():
    from sysflow.model import SysflowError
    buf = encode_record(SAMPLE[2])
    for cut in range(len(buf)):
        with pytest.raises(SysflowError):
            decode_record(buf[:cut])
