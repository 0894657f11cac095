"""Little-endian reader with bounds checks and a CRC32 trailer."""

from __future__ import annotations

import struct
import zlib

from ..errors import CorruptFileError


def seal(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def unseal(blob: bytes, what: str) -> bytes:
    if len(blob) < 8:
        raise CorruptFileError(f"{what}: file too short ({len(blob)} bytes)")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptFileError(f"{what}: CRC mismatch")
    return payload


class Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptFileError(f"{self.what}: truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self):
        if self.pos != len(self.buf):
            raise CorruptFileError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")
