"""Compact binary primitives shared by the serialized containers."""

from __future__ import annotations

from .errors import ParseError


def write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varint requires a nonnegative value")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ParseError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def zigzag(value: int) -> int:
    return (value << 1) ^ (value >> 63) if -(1 << 62) <= value < (1 << 62) \
        else (value << 1) if value >= 0 else ((-value) << 1) - 1


def write_signed(out: bytearray, value: int) -> None:
    write_varint(out, (value << 1) if value >= 0 else ((-value) << 1) - 1)


def read_signed(buf: bytes, pos: int) -> tuple[int, int]:
    raw, pos = read_varint(buf, pos)
    return (raw >> 1) if (raw & 1) == 0 else -((raw + 1) >> 1), pos


def write_bigint(out: bytearray, value: int) -> None:
    """Length-prefixed two's-complement-free big integer (sign byte + magnitude)."""
    sign = 1 if value < 0 else 0
    mag = -value if sign else value
    payload = mag.to_bytes((mag.bit_length() + 7) // 8 or 1, "little")
    write_varint(out, len(payload))
    out.append(sign)
    out.extend(payload)


def read_bigint(buf: bytes, pos: int) -> tuple[int, int]:
    length, pos = read_varint(buf, pos)
    if pos + 1 + length > len(buf):
        raise ParseError("truncated bigint")
    sign = buf[pos]
    mag = int.from_bytes(buf[pos + 1: pos + 1 + length], "little")
    return (-mag if sign else mag), pos + 1 + length
