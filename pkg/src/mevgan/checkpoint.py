"""Named-tensor container shared by checkpoints and raw video exports.

A file is a sequence of records. Each record, all integers little-endian::

    b"MVGN"                 magic
    u16  version            FORMAT_VERSION
    u16  len, utf-8         role tag
    u8   frozen             1 if the role's weights are frozen
    u32  n_tensors
    per tensor:
        u16 len, utf-8      name
        u8  rank
        u32 * rank          dims
        f32 * prod(dims)    data, row-major
    u32  crc32              of every byte after the magic and before the crc
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MVGN"
FORMAT_VERSION = 1

ROLES = ("backbone-generator", "backbone-discriminator", "plugin", "video-discriminator", "meta", "video")


class CheckpointError(ValueError):
    pass


@dataclass
class Record:
    role: str
    tensors: dict = field(default_factory=dict)
    frozen: bool = False


def encode_record(record: Record) -> bytes:
    role = record.role.encode("utf-8")
    parts = [struct.pack("<HH", FORMAT_VERSION, len(role)), role,
             struct.pack("<BI", int(record.frozen), len(record.tensors))]
    for name, arr in record.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def decode_record(buf: bytes, offset: int = 0) -> tuple[Record, int]:
    """Decode one record starting at ``offset``; return it and the next offset."""
    if buf[offset:offset + 4] != MAGIC:
        raise CheckpointError(f"bad magic at byte {offset}")
    pos = offset + 4
    try:
        version, role_len = struct.unpack_from("<HH", buf, pos)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {version}")
        pos += 4
        role = buf[pos:pos + role_len].decode("utf-8")
        pos += role_len
        frozen, count = struct.unpack_from("<BI", buf, pos)
        pos += 5
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(buf):
                raise CheckpointError(f"tensor {name!r} runs past end of file")
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
        (crc,) = struct.unpack_from("<I", buf, pos)
    except CheckpointError:
        raise
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"truncated or malformed record: {exc}") from exc
    if zlib.crc32(buf[offset + 4:pos]) != crc:
        raise CheckpointError(f"CRC mismatch in record {role!r}")
    return Record(role, tensors, bool(frozen)), pos + 4


def write_records(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(encode_record(rec))


def read_records(path) -> dict[str, Record]:
    buf = Path(path).read_bytes()
    out, pos = {}, 0
    while pos < len(buf):
        rec, pos = decode_record(buf, pos)
        out[rec.role] = rec
    if not out:
        raise CheckpointError(f"{path}: no records")
    return out


def weight_checksum(tensors: dict) -> int:
    """64-bit digest over names, shapes and raw float32 bytes, in sorted name order."""
    h = hashlib.blake2b(digest_size=8)
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        h.update(name.encode("utf-8"))
        h.update(struct.pack(f"<{arr.ndim}I", *arr.shape))
        h.update(arr.tobytes())
    return int.from_bytes(h.digest(), "little")
