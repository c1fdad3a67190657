"""Binary ``.nvqg`` container for quantised splat clouds.

Layout, all integers little-endian::

    magic "NVQG" | version u16 | flags u16 | splat count u64
    4 x (dim u16, bits u8, entries u32)          groups s, r, c, sh
    4 codebooks, row-major float32
    N x (x, y, z, opacity) float32
    4 index streams, LSB-first at ``bits`` per index, each padded to a byte
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from gsvq.quantized import DIMS, GROUPS, QuantizedCloud
from gsvq.splat_model import raw_parameter_count
from gsvq.vq import Codebook

MAGIC = b"NVQG"
VERSION = 1
FLAG_HAS_SH = 1

_HEAD = struct.Struct("<4sHHQ")
_GROUP = struct.Struct("<HBI")
HEADER_BYTES = _HEAD.size + len(GROUPS) * _GROUP.size


class CodecError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(CodecError):
    pass


class UnsupportedVersionError(CodecError):
    pass


class HeaderError(CodecError):
    pass


class TruncatedStreamError(CodecError):
    pass


class IndexRangeError(CodecError):
    pass


def pack_indices(idx, bits):
    """Pack non-negative integers LSB-first at ``bits`` bits each."""
    idx = np.asarray(idx, dtype=np.uint64)
    if len(idx) == 0:
        return b""
    shifts = np.arange(bits, dtype=np.uint64)
    bitmat = ((idx[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.ravel(), bitorder="little").tobytes()


def unpack_indices(buf, n, bits):
    if n == 0:
        return np.zeros(0, np.int64)
    flat = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n * bits, bitorder="little")
    weights = np.left_shift(np.int64(1), np.arange(bits, dtype=np.int64))
    return flat.reshape(n, bits).astype(np.int64) @ weights


def check_indices(idx, entries, group, offset):
    """Raise :class:`IndexRangeError` if any decoded index is ``>= entries``.

    Headers force ``entries == 2**bits`` so this cannot fire for a file that
    passed header validation; it guards callers that relax that rule.
    """
    if len(idx) and idx.max() >= entries:
        raise IndexRangeError(f"index stream {group!r} holds an index >= {entries}", offset)


def stream_bytes(n, bits):
    return math.ceil(n * bits / 8)


def bits_for(entries):
    return max(1, int(entries - 1).bit_length())


@dataclass
class FileHeader:
    splat_count: int
    dims: tuple
    bits: tuple
    entries: tuple
    version: int = VERSION
    flags: int = FLAG_HAS_SH

    def pack(self):
        out = _HEAD.pack(MAGIC, self.version, self.flags, self.splat_count)
        for d, b, e in zip(self.dims, self.bits, self.entries):
            out += _GROUP.pack(d, b, e)
        return out


def _header_for(q):
    entries = tuple(q.codebook(g).entries for g in GROUPS)
    for g, e in zip(GROUPS, entries):
        if e < 2 or e & (e - 1):
            raise ValueError(f"codebook {g!r} has {e} entries; the format needs a power of two >= 2")
    return FileHeader(len(q), tuple(DIMS[g] for g in GROUPS), tuple(bits_for(e) for e in entries), entries)


def encode_bytes(q):
    header = _header_for(q)
    parts = [header.pack()]
    for g in GROUPS:
        parts.append(np.ascontiguousarray(q.codebook(g).vectors, dtype="<f4").tobytes())
    raw = np.empty((len(q), 4), dtype="<f4")
    raw[:, :3] = q.x
    raw[:, 3] = q.o_raw
    parts.append(raw.tobytes())
    for g, bits, e in zip(GROUPS, header.bits, header.entries):
        idx = q.index(g)
        if len(idx) and (idx.min() < 0 or idx.max() >= e):
            raise ValueError(f"index out of range for codebook {g!r}")
        parts.append(pack_indices(idx, bits))
    return b"".join(parts)


def encode(q, path):
    data = encode_bytes(q)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedStreamError(
                f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def read_header(buf):
    r = _Reader(buf)
    if len(buf) >= 4 and buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}", 0)
    magic, version, flags, n = _HEAD.unpack(r.take(_HEAD.size, "header"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if not flags & FLAG_HAS_SH:
        raise HeaderError("files without SH codebooks are not supported", 6)
    dims, bits, entries = [], [], []
    for g in GROUPS:
        off = r.pos
        d, b, e = _GROUP.unpack(r.take(_GROUP.size, f"group record {g!r}"))
        if d != DIMS[g]:
            raise HeaderError(f"group {g!r} has dim {d}, expected {DIMS[g]}", off)
        if not 1 <= b <= 32 or e != 1 << b:
            raise HeaderError(f"group {g!r}: entries {e} != 2**bits with bits={b}", off + 2)
        dims.append(d), bits.append(b), entries.append(e)
    return FileHeader(n, tuple(dims), tuple(bits), tuple(entries), version, flags), r


def decode_bytes(buf):
    header, r = read_header(buf)
    n = header.splat_count
    books = {}
    for g, d, e in zip(GROUPS, header.dims, header.entries):
        raw = r.take(4 * d * e, f"codebook {g!r}")
        books[g] = Codebook(np.frombuffer(raw, dtype="<f4").reshape(e, d).astype(np.float32))
    if n > (len(buf) - r.pos) // 16:
        raise TruncatedStreamError(f"truncated position/opacity block for {n} splats", r.pos)
    raw = np.frombuffer(r.take(16 * n, "position/opacity block"), dtype="<f4").reshape(n, 4)
    idx = {}
    for g, bits, e in zip(GROUPS, header.bits, header.entries):
        off = r.pos
        idx[g] = unpack_indices(r.take(stream_bytes(n, bits), f"index stream {g!r}"), n, bits)
        check_indices(idx[g], e, g, off)
    if r.pos != len(buf):
        raise HeaderError(f"{len(buf) - r.pos} trailing bytes after the last stream", r.pos)
    return QuantizedCloud(raw[:, :3].copy(), raw[:, 3].copy(), idx["s"], idx["r"], idx["c"],
                          idx["sh"], books["s"], books["r"], books["c"], books["sh"])


def decode(path):
    with open(path, "rb") as fh:
        return decode_bytes(fh.read())


def size_report(q):
    """Byte breakdown of the encoded file and the ratio against raw 32-bit storage."""
    n = len(q)
    header = _header_for(q)
    codebooks = sum(4 * d * e for d, e in zip(header.dims, header.entries))
    streams = {g: stream_bytes(n, b) for g, b in zip(GROUPS, header.bits)}
    raw_fields = 16 * n
    total = HEADER_BYTES + codebooks + raw_fields + sum(streams.values())
    uncompressed = n * raw_parameter_count(3) * 4
    return {
        "splats": n,
        "header": HEADER_BYTES,
        "codebooks": codebooks,
        "raw_fields": raw_fields,
        "index_streams": streams,
        "total": total,
        "uncompressed": uncompressed,
        "ratio": uncompressed / total,
        "payload_bits_per_splat": 128 + sum(header.bits),
    }
