"""Episode container: a little-endian stream of named array records.

Layout: 4-byte magic, u32 version, then records until EOF. Each record is
name-length u16, name bytes (utf-8), dtype u8 (0 = float32, 1 = uint8),
rank u8, dims u32 x rank, row-major payload. The same record stream also
carries checkpoints under a different magic. Chosen over pickle/npz so the
browser-side exporter can write files with a few dozen lines of plain code.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

EPISODE_MAGIC = b"PGME"
CHECKPOINT_MAGIC = b"PGMC"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES_BY_KIND = {"f": 0, "u": 1}


class FormatError(ValueError):
    """Base for malformed container files."""


class MagicMismatch(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedRecord(FormatError):
    pass


class UnknownDtype(FormatError):
    pass


class SchemaError(FormatError):
    """Structurally valid file whose records don't form a valid episode."""


def _encode_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    if len(nb) > 0xFFFF:
        raise ValueError(f"record name too long: {name[:40]}...")
    if arr.dtype == np.uint8:
        code, payload = 1, np.ascontiguousarray(arr)
    else:
        code, payload = 0, np.ascontiguousarray(arr, dtype="<f4")
    if payload.ndim == 0:
        payload = payload.reshape(1)
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, payload.ndim)
    dims = struct.pack(f"<{payload.ndim}I", *payload.shape)
    return head + dims + payload.tobytes()


def write_records(path, records: dict[str, np.ndarray], magic: bytes = EPISODE_MAGIC) -> None:
    """Serialize records in iteration order; parent dirs must exist."""
    blob = bytearray(magic)
    blob += struct.pack("<I", VERSION)
    for name, arr in records.items():
        blob += _encode_record(name, np.asarray(arr))
    Path(path).write_bytes(bytes(blob))


def _take(buf: bytes, pos: int, n: int, what: str) -> tuple[bytes, int]:
    if pos + n > len(buf):
        raise TruncatedRecord(f"unexpected end of file while reading {what}")
    return buf[pos : pos + n], pos + n


def read_records(path, magic: bytes = EPISODE_MAGIC) -> dict[str, np.ndarray]:
    """Parse a record file; raises the structured FormatError subclasses."""
    buf = Path(path).read_bytes()
    head, pos = _take(buf, 0, 4, "magic")
    if head != magic:
        raise MagicMismatch(f"expected magic {magic!r}, found {head!r}")
    vraw, pos = _take(buf, pos, 4, "version")
    version = struct.unpack("<I", vraw)[0]
    if version != VERSION:
        raise VersionMismatch(f"unsupported version {version} (expected {VERSION})")
    records: dict[str, np.ndarray] = {}
    while pos < len(buf):
        nraw, pos = _take(buf, pos, 2, "name length")
        (nlen,) = struct.unpack("<H", nraw)
        nb, pos = _take(buf, pos, nlen, "record name")
        name = nb.decode("utf-8")
        meta, pos = _take(buf, pos, 2, f"{name} header")
        code, rank = meta[0], meta[1]
        if code not in _DTYPE_CODES:
            raise UnknownDtype(f"record {name!r}: dtype code {code}")
        draw, pos = _take(buf, pos, 4 * rank, f"{name} dims")
        dims = struct.unpack(f"<{rank}I", draw)
        dt = _DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        praw, pos = _take(buf, pos, nbytes, f"{name} payload")
        records[name] = np.frombuffer(praw, dtype=dt).reshape(dims).copy()
    return records
