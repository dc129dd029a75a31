"""Embedding vectors, the CVGE binary exchange format, and a toy extractor.

Embeddings are fixed-length float32 vectors keyed by image id. Files are
little-endian with layout::

    magic "CVGE" | version u16 = 1 | reserved u16 = 0 | dim u32 | count u64
    then count records of [id_len u16 | id UTF-8 | dim * f32]

``read_embeddings(write_embeddings(t))`` preserves float bit patterns
exactly, so exported backbone features survive a round trip losslessly.
Stored vectors are NOT normalized; normalization happens at index build
and at model forward output.

``toy_embed`` is a deterministic stand-in for a real feature extractor:
grid-pooled per-channel color means, L2-normalized. It exists so the
whole engine can be exercised end to end without any ML framework.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadImageError,
    BadMagicError,
    DataError,
    DimMismatchError,
    DuplicateIdError,
    GridTooLargeError,
    TruncatedFileError,
    UnsupportedVersionError,
    ZeroVectorError,
)

EMBEDDING_MAGIC = b"CVGE"
EMBEDDING_FORMAT_VERSION = 1

_HEADER = struct.Struct("<HHIQ")  # version, reserved, dim, count
_ID_LEN = struct.Struct("<H")


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm, preserving direction and dtype."""
    v = np.asarray(v)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return (v / norm).astype(v.dtype)


class EmbeddingTable:
    """Ordered map of image id -> float32 embedding, all sharing one dim."""

    def __init__(self, entries: dict[str, np.ndarray], dim: int | None = None):
        coerced: dict[str, np.ndarray] = {}
        for key, vec in entries.items():
            arr = np.asarray(vec, dtype=np.float32).reshape(-1)
            if dim is None:
                dim = arr.size
            if arr.size != dim:
                raise DimMismatchError(
                    f"entry {key!r} has dim {arr.size}, table dim is {dim}"
                )
            if not np.all(np.isfinite(arr)):
                raise DataError(f"entry {key!r} contains non-finite values")
            coerced[key] = arr
        if dim is None or dim < 1:
            raise DimMismatchError("table dim must be a positive integer")
        self.dim = dim
        self.entries = coerced

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __getitem__(self, key: str) -> np.ndarray:
        return self.entries[key]

    def ids(self) -> list[str]:
        return list(self.entries)

    def items(self):
        return self.entries.items()

    def matrix(self, order: list[str] | None = None) -> np.ndarray:
        """Stack entries into an (n, dim) float32 matrix, given row order."""
        keys = self.ids() if order is None else order
        return np.stack([self.entries[k] for k in keys]) if keys else np.empty((0, self.dim), np.float32)


@dataclass(frozen=True)
class Image:
    """Raw RGB pixel buffer, values in [0, 1], shape (height, width, 3)."""

    width: int
    height: int
    data: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise BadImageError(f"expected (height, width, 3) pixels, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr)

    def validate(self) -> None:
        if self.data.shape != (self.height, self.width, 3):
            raise BadImageError(
                f"pixel buffer shape {self.data.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.width < 1 or self.height < 1:
            raise BadImageError("image must have at least one pixel")
        if not np.all(np.isfinite(self.data)):
            raise BadImageError("pixel values must be finite")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise BadImageError("pixel values must lie in [0, 1]")


def load_image(path) -> Image:
    """Decode an image file (any Pillow-readable format) to RGB in [0, 1]."""
    from PIL import Image as PILImage
    from PIL import UnidentifiedImageError

    try:
        with PILImage.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}")
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise BadImageError(f"{path}: cannot decode image: {exc}")
    return Image.from_array(arr)


def toy_embed(image: Image, grid: int = 8) -> np.ndarray:
    """Grid-pooled color-mean embedding of dim 3 * grid**2.

    The image is split into grid x grid cells along floor-partitioned
    pixel ranges; each cell contributes its per-channel mean. Cells are
    concatenated channel-major and the result is L2-normalized.
    """
    image.validate()
    if grid < 1:
        raise ValueError(f"grid must be >= 1, got {grid}")
    if grid > min(image.width, image.height):
        raise GridTooLargeError(
            f"grid {grid} exceeds min(width, height) = {min(image.width, image.height)}"
        )

    ys = [i * image.height // grid for i in range(grid + 1)]
    xs = [j * image.width // grid for j in range(grid + 1)]
    data = image.data.astype(np.float64)
    cells = np.empty((3, grid, grid), dtype=np.float64)
    for cy in range(grid):
        for cx in range(grid):
            block = data[ys[cy] : ys[cy + 1], xs[cx] : xs[cx + 1], :]
            cells[:, cy, cx] = block.mean(axis=(0, 1))

    flat = cells.ravel()
    norm = float(np.linalg.norm(flat))
    if norm == 0.0:
        raise BadImageError("image embeds to the zero vector (all-black input)")
    return (flat / norm).astype(np.float32)


def write_embeddings(table: EmbeddingTable, path) -> None:
    """Serialize a table to the CVGE binary format."""
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(_HEADER.pack(EMBEDDING_FORMAT_VERSION, 0, table.dim, len(table)))
        for key, vec in table.items():
            encoded = key.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise DataError(f"id too long to serialize: {key[:32]!r}...")
            f.write(_ID_LEN.pack(len(encoded)))
            f.write(encoded)
            f.write(vec.astype("<f4", copy=False).tobytes())


def read_embeddings(path) -> EmbeddingTable:
    """Read a CVGE file back into a table, bit-exactly."""
    blob = open(path, "rb").read()
    if len(blob) < 4 or blob[:4] != EMBEDDING_MAGIC:
        raise BadMagicError(f"{path}: not a CVGE embedding file")
    if len(blob) < 4 + _HEADER.size:
        raise TruncatedFileError(f"{path}: header is incomplete")
    version, reserved, dim, count = _HEADER.unpack_from(blob, 4)
    if version != EMBEDDING_FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version} is not supported")
    if reserved != 0:
        raise UnsupportedVersionError(f"{path}: reserved header field is nonzero")
    if dim < 1:
        raise DimMismatchError(f"{path}: declared dim must be >= 1, got {dim}")

    offset = 4 + _HEADER.size
    record_bytes = 4 * dim
    entries: dict[str, np.ndarray] = {}
    for i in range(count):
        if offset + _ID_LEN.size > len(blob):
            raise TruncatedFileError(f"{path}: record {i}: missing id length")
        (id_len,) = _ID_LEN.unpack_from(blob, offset)
        offset += _ID_LEN.size
        if offset + id_len + record_bytes > len(blob):
            raise TruncatedFileError(
                f"{path}: record {i}: file ends before record is complete "
                f"(declared count {count})"
            )
        key = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).copy()
        offset += record_bytes
        if key in entries:
            raise DuplicateIdError(f"{path}: duplicate id {key!r}")
        entries[key] = vec
    if offset != len(blob):
        raise TruncatedFileError(
            f"{path}: {len(blob) - offset} trailing bytes after {count} records"
        )
    return EmbeddingTable(entries, dim=int(dim))
