"""Embedding vectors and the persistent embedding store.

On-disk layout (little-endian)::

    b"FCTE" | u32 version=1 | u32 dim | u64 count
    u32 tag_len | tag (UTF-8)
    count x [u32 id_len | id (UTF-8)]
    count x dim float32, row-major
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateId,
    FormatError,
    NormError,
    StoreIOError,
    UnknownId,
    ValidationError,
    ZeroVector,
)

MAGIC = b"FCTE"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQ")

NORM_TOL = 1e-5
LOAD_NORM_TOL = 1e-4
ZERO_NORM = 1e-12


def normalize(v, dtype=np.float32) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    The norm is computed in float64 and the result cast to ``dtype``.
    Raises ZeroVector when the norm is below 1e-12.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValidationError(f"expected a non-empty 1-d vector, got shape {x.shape}")
    n = float(np.sqrt(np.dot(x, x)))
    if not np.isfinite(n):
        raise ValidationError("vector has non-finite entries")
    if n < ZERO_NORM:
        raise ZeroVector(f"vector norm {n:.3g} is below {ZERO_NORM}")
    return (x / n).astype(dtype)


def normalize_rows(m, dtype=np.float32) -> np.ndarray:
    x = np.asarray(m, dtype=np.float64)
    n = np.sqrt(np.einsum("ij,ij->i", x, x))
    bad = np.flatnonzero(~(n >= ZERO_NORM))
    if bad.size:
        raise ZeroVector(f"row {int(bad[0])} has norm {n[bad[0]]:.3g}")
    return (x / n[:, None]).astype(dtype)


def _check_id(item_id) -> str:
    if not isinstance(item_id, str) or not item_id:
        raise ValidationError(f"item id must be a non-empty string, got {item_id!r}")
    if "\n" in item_id or "\r" in item_id:
        raise ValidationError(f"item id contains a newline: {item_id!r}")
    return item_id


class EmbeddingStore:
    """Immutable id-addressed matrix of unit-norm float32 rows."""

    def __init__(
        self,
        ids: Sequence[str],
        rows,
        tag: str = "general",
        *,
        dim: int | None = None,
        norm_tol: float = NORM_TOL,
    ):
        ids = tuple(_check_id(i) for i in ids)
        rows = np.asarray(rows, dtype=np.float32)
        if rows.size == 0:
            if dim is None:
                dim = rows.shape[1] if rows.ndim == 2 else 0
            rows = rows.reshape(0, dim)
        if rows.ndim != 2:
            raise ValidationError(f"rows must be 2-d, got shape {rows.shape}")
        if dim is not None and rows.shape[1] != dim:
            raise DimMismatch(f"rows have dim {rows.shape[1]}, expected {dim}")
        if rows.shape[1] < 1:
            raise ValidationError("dim must be positive")
        if len(ids) != rows.shape[0]:
            raise ValidationError(f"{len(ids)} ids for {rows.shape[0]} rows")
        index = {}
        for pos, i in enumerate(ids):
            if i in index:
                raise DuplicateId(f"duplicate id {i!r}")
            index[i] = pos
        if len(ids):
            r64 = rows.astype(np.float64)
            norms = np.sqrt(np.einsum("ij,ij->i", r64, r64))
            off = np.flatnonzero(~(np.abs(norms - 1.0) <= norm_tol))
            if off.size:
                j = int(off[0])
                raise NormError(f"row {ids[j]!r} has norm {norms[j]!r}")
        rows = np.ascontiguousarray(rows)
        rows.setflags(write=False)
        self.ids = ids
        self.rows = rows
        self.tag = str(tag)
        self._index = index
        self._order = None

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id) -> bool:
        return item_id in self._index

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.tag == other.tag
            and self.dim == other.dim
            and self.rows.tobytes() == other.rows.tobytes()
        )

    def __repr__(self):
        return f"EmbeddingStore(tag={self.tag!r}, count={len(self)}, dim={self.dim})"

    def position(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise UnknownId(f"unknown id {item_id!r}") from None

    def positions(self, item_ids: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.position(i) for i in item_ids), dtype=np.int64)

    def get(self, item_id: str) -> np.ndarray:
        return self.rows[self.position(item_id)]

    @property
    def id_order(self) -> np.ndarray:
        """Lexicographic rank of each row's id; breaks score ties."""
        if self._order is None:
            order = np.empty(len(self.ids), dtype=np.int64)
            order[sorted(range(len(self.ids)), key=self.ids.__getitem__)] = np.arange(
                len(self.ids), dtype=np.int64
            )
            order.setflags(write=False)
            self._order = order
        return self._order

    @classmethod
    def from_mapping(cls, vectors: dict, tag: str = "general") -> "EmbeddingStore":
        ids = list(vectors)
        rows = np.stack([np.asarray(vectors[i], dtype=np.float32) for i in ids]) if ids else []
        return cls(ids, rows, tag)


def store_get(store: EmbeddingStore, item_id: str) -> np.ndarray:
    return store.get(item_id)


def _encode(store: EmbeddingStore) -> bytes:
    tag = store.tag.encode("utf-8")
    parts = [HEADER.pack(MAGIC, FORMAT_VERSION, store.dim, len(store)), struct.pack("<I", len(tag)), tag]
    for i in store.ids:
        b = i.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    parts.append(store.rows.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(parts)


def store_save(store: EmbeddingStore, path) -> None:
    # ids are validated unique at construction, so a constructed store is always writable
    data = _encode(store)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc


def store_loads(data: bytes, *, norm_tol: float = LOAD_NORM_TOL) -> EmbeddingStore:
    if len(data) < HEADER.size:
        raise FormatError("truncated header")
    magic, version, dim, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if dim < 1:
        raise FormatError("dim must be positive")
    off = HEADER.size

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise FormatError("truncated file")
        chunk = data[off : off + n]
        off += n
        return chunk

    def take_str():
        (n,) = struct.unpack("<I", take(4))
        try:
            return take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8: {exc}") from exc

    tag = take_str()
    ids = [take_str() for _ in range(count)]
    payload = take(count * dim * 4)
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes")
    rows = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(count, dim)
    return EmbeddingStore(ids, rows, tag, dim=dim, norm_tol=norm_tol)


def store_load(path, *, norm_tol: float = LOAD_NORM_TOL) -> EmbeddingStore:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StoreIOError(f"cannot read {path}: {exc}") from exc
    return store_loads(data, norm_tol=norm_tol)


def default_store_name(tag: str) -> str:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in tag)
    return f"{safe}.fcte"


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        os.makedirs(p, exist_ok=True)
    except OSError as exc:
        raise StoreIOError(f"cannot create {p}: {exc}") from exc
    return p
