"""Keyed store of fixed-dimension embedding vectors.

One binary format serves image, region, and tag-text embeddings. Vectors are
stored as 32-bit little-endian floats and widened to 64-bit for all in-memory
computation, so a load/save round trip is bitwise exact.

Format EMB1:
    magic    4 bytes  b"EMB1"
    count    u32 LE
    dim      u32 LE
    normed   u8       1 if every vector is unit length
    records  count times:
        key_len  u16 LE
        key      key_len bytes, UTF-8
        vector   dim * f32 LE
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import TagforgeError

MAGIC = b"EMB1"
NORM_TOLERANCE = 1e-4


class EmbeddingFormatError(TagforgeError):
    pass


class EmbeddingTable:
    """Immutable mapping key -> vector, all vectors sharing one dimension."""

    def __init__(self, keys: Iterable[str], matrix: np.ndarray, normalized: bool = False):
        self.keys: tuple[str, ...] = tuple(keys)
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise EmbeddingFormatError("matrix must be 2-dimensional")
        if matrix.shape[0] != len(self.keys):
            raise EmbeddingFormatError(
                f"key count {len(self.keys)} does not match row count {matrix.shape[0]}"
            )
        if matrix.shape[1] < 1:
            raise EmbeddingFormatError("dimension must be positive")
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self.dim: int = matrix.shape[1]
        self.normalized = normalized
        self._index: dict[str, int] = {}
        for i, key in enumerate(self.keys):
            if key in self._index:
                raise EmbeddingFormatError(f"duplicate key {key!r}")
            self._index[key] = i
        if not np.isfinite(matrix).all():
            bad = self.keys[int(np.argwhere(~np.isfinite(matrix))[0][0])]
            raise EmbeddingFormatError(f"non-finite value in vector for key {bad!r}")
        if normalized:
            norms = np.linalg.norm(matrix, axis=1)
            off = np.abs(norms - 1.0) > NORM_TOLERANCE
            if off.any():
                bad = self.keys[int(np.argmax(off))]
                raise EmbeddingFormatError(
                    f"normalized flag set but key {bad!r} has norm {norms[np.argmax(off)]:.6g}"
                )

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, np.ndarray], normalized: bool = False):
        keys = list(vectors)
        if not keys:
            raise EmbeddingFormatError("cannot infer dimension from an empty mapping")
        matrix = np.asarray([np.asarray(vectors[k], dtype=np.float64) for k in keys])
        return cls(keys, matrix, normalized)

    @classmethod
    def empty(cls, dim: int, normalized: bool = False):
        return cls([], np.empty((0, dim), dtype=np.float64), normalized)

    def vector(self, key: str) -> np.ndarray:
        i = self._index.get(key)
        if i is None:
            raise KeyError(key)
        return self.matrix[i]

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self.keys)


def load_embeddings(path: str | Path, expected_dim: int | None = None) -> EmbeddingTable:
    """Parse an EMB1 file, validating structure and values.

    Every failure mode is a distinct error naming the byte offset and, where
    one exists, the offending key.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic at offset 0, expected {MAGIC!r}")
    if len(data) < 13:
        raise EmbeddingFormatError(f"{path}: truncated header at offset {len(data)}")
    count, dim = struct.unpack_from("<II", data, 4)
    normalized = data[12] != 0
    if dim < 1:
        raise EmbeddingFormatError(f"{path}: dimension 0 at offset 8")
    if expected_dim is not None and dim != expected_dim:
        raise EmbeddingFormatError(
            f"{path}: dimension mismatch at offset 8: file has {dim}, expected {expected_dim}"
        )

    offset = 13
    keys: list[str] = []
    rows = np.empty((count, dim), dtype=np.float64)
    seen: set[str] = set()
    vec_bytes = dim * 4
    for i in range(count):
        if offset + 2 > len(data):
            raise EmbeddingFormatError(f"{path}: truncated payload at offset {offset}")
        (key_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + key_len > len(data):
            raise EmbeddingFormatError(f"{path}: truncated key at offset {offset}")
        try:
            key = data[offset : offset + key_len].decode("utf-8")
        except UnicodeDecodeError:
            raise EmbeddingFormatError(f"{path}: invalid UTF-8 key at offset {offset}") from None
        offset += key_len
        if key in seen:
            raise EmbeddingFormatError(f"{path}: duplicate key {key!r} at offset {offset}")
        seen.add(key)
        if offset + vec_bytes > len(data):
            raise EmbeddingFormatError(
                f"{path}: truncated vector for key {key!r} at offset {offset}"
            )
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        if not np.isfinite(vec).all():
            raise EmbeddingFormatError(
                f"{path}: non-finite value for key {key!r} at offset {offset}"
            )
        rows[i] = vec
        offset += vec_bytes
        keys.append(key)
    if offset != len(data):
        raise EmbeddingFormatError(f"{path}: {len(data) - offset} trailing bytes at offset {offset}")
    try:
        return EmbeddingTable(keys, rows, normalized)
    except EmbeddingFormatError as exc:
        raise EmbeddingFormatError(f"{path}: {exc}") from None


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(table), table.dim))
        fh.write(struct.pack("<B", 1 if table.normalized else 0))
        f32 = table.matrix.astype("<f4")
        for i, key in enumerate(table.keys):
            encoded = key.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise EmbeddingFormatError(f"key too long: {key[:40]!r}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(f32[i].tobytes())


def normalize(table: EmbeddingTable) -> EmbeddingTable:
    """Scale every vector to unit L2 norm; errors on zero vectors."""
    norms = np.linalg.norm(table.matrix, axis=1)
    zero = norms == 0.0
    if zero.any():
        bad = table.keys[int(np.argmax(zero))]
        raise EmbeddingFormatError(f"cannot normalize zero vector for key {bad!r}")
    return EmbeddingTable(table.keys, table.matrix / norms[:, None], normalized=True)
