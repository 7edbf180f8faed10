"""Zigzag varint encoding for signed 64-bit integers.

Zigzag maps signed to unsigned so small magnitudes stay short:
z = (n << 1) ^ (n >> 63).  The unsigned value is then written as
little-endian base-128 groups with a continuation bit, e.g. 150 ->
0xAC 0x02.
"""

from __future__ import annotations

from .model import SysflowError

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
_MASK64 = (1 << 64) - 1


class VarintError(SysflowError):
    """Malformed or out-of-range varint."""


def zigzag(n: int) -> int:
    if not INT64_MIN <= n <= INT64_MAX:
        raise VarintError(f"value {n} outside signed 64-bit range")
    return ((n << 1) ^ (n >> 63)) & _MASK64


def unzigzag(z: int) -> int:
    return (z >> 1) ^ -(z & 1)


def encode_unsigned(value: int, out: bytearray) -> None:
    if value < 0 or value > _MASK64:
        raise VarintError(f"value {value} outside unsigned 64-bit range")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def encode_signed(value: int, out: bytearray) -> None:
    encode_unsigned(zigzag(value), out)


def decode_unsigned(buf: bytes, pos: int) -> tuple[int, int]:
    """Decode one unsigned varint at pos; returns (value, new_pos)."""
    value = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise VarintError(f"truncated varint at byte offset {pos}")
        byte = buf[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            break
        shift += 7
        if shift > 63:
            raise VarintError(f"varint longer than 10 bytes at byte offset {pos}")
    if value > _MASK64:
        raise VarintError("varint overflows 64 bits")
    return value, pos


def decode_signed(buf: bytes, pos: int) -> tuple[int, int]:
    z, pos = decode_unsigned(buf, pos)
    return unzigzag(z), pos
