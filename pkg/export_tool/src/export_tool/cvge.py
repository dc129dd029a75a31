"""Writer (and verifying reader) for the CVGE embedding container.

Layout, all integers little-endian:

    magic   4 bytes  "CVGE"
    version u16      currently 1
    reserved u16     must be 0
    dim     u32      vector width
    count   u64      number of records
    then per record: id_len u16, id UTF-8 bytes, dim float32 values

This implementation is intentionally standalone: the format is the
contract with the consuming engine, so the tool carries its own codec
rather than importing the engine.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"CVGE"
VERSION = 1
_HEADER = struct.Struct("<HHIQ")
_ID_LEN = struct.Struct("<H")


def write_cvge(entries, dim: int, path) -> None:
    """Write (id, vector) pairs in iteration order.

    ``entries`` is an iterable of (str, array) pairs or a dict. Vectors
    are cast to float32; every vector must have exactly ``dim`` values.
    """
    if dim < 1:
        raise FormatError(f"dim must be positive, got {dim}")
    pairs = list(entries.items()) if isinstance(entries, dict) else list(entries)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, 0, dim, len(pairs)))
        for image_id, vector in pairs:
            encoded = image_id.encode("utf-8")
            if not 0 < len(encoded) <= 0xFFFF:
                raise FormatError(f"id length {len(encoded)} out of range for {image_id!r}")
            vector = np.asarray(vector, dtype=np.float32)
            if vector.shape != (dim,):
                raise FormatError(
                    f"vector for {image_id!r} has shape {vector.shape}, expected ({dim},)"
                )
            f.write(_ID_LEN.pack(len(encoded)))
            f.write(encoded)
            f.write(vector.tobytes())


def read_cvge(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    """Read a CVGE file back; used for round-trip verification."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 4 + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    version, reserved, dim, count = _HEADER.unpack_from(blob, 4)
    if version != VERSION or reserved != 0:
        raise FormatError(f"{path}: unsupported version {version} (reserved {reserved})")
    offset = 4 + _HEADER.size
    records: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for _ in range(count):
        if offset + _ID_LEN.size > len(blob):
            raise FormatError(f"{path}: truncated record header")
        (id_len,) = _ID_LEN.unpack_from(blob, offset)
        offset += _ID_LEN.size
        end = offset + id_len + 4 * dim
        if end > len(blob):
            raise FormatError(f"{path}: truncated record body")
        image_id = blob[offset : offset + id_len].decode("utf-8")
        if image_id in seen:
            raise FormatError(f"{path}: duplicate id {image_id!r}")
        seen.add(image_id)
        offset += id_len
        vector = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).copy()
        offset = end
        records.append((image_id, vector))
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return dim, records
