"""ACEM embedding store: a flat f32 matrix plus a sidecar list of ids.

Layout (little-endian)::

    b"ACEM" | version u32 | n_rows u64 | dim u32 | dtype u32 | payload

``dtype`` 1 means float32 little-endian, the only tag written. Row ``i``
belongs to the ``i``-th line of ``<path>.ids``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptStore, MissingEmbedding

MAGIC = b"ACEM"
VERSION = 1
DTYPE_F32_LE = 1
_HEADER = struct.Struct("<4sIQII")


def ids_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids")


def write_store(path, ids, matrix) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-D, got {matrix.shape}")
    ids = [str(i) for i in ids]
    if len(ids) != matrix.shape[0]:
        raise ValueError(f"{len(ids)} ids for {matrix.shape[0]} rows")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    if any("\n" in i for i in ids):
        raise ValueError("ids may not contain newlines")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, matrix.shape[0], matrix.shape[1], DTYPE_F32_LE))
        fh.write(matrix.tobytes())
    ids_path(path).write_text("".join(i + "\n" for i in ids), encoding="utf-8")


def _read_header(fh, path):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise CorruptStore(f"{path}: truncated header")
    magic, version, n, dim, tag = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CorruptStore(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptStore(f"{path}: unsupported version {version}")
    if tag != DTYPE_F32_LE:
        raise CorruptStore(f"{path}: unsupported dtype tag {tag}")
    return n, dim


class EmbeddingStore:
    """Read side of an ACEM file; ``mmap=True`` keeps the payload on disk."""

    def __init__(self, ids, matrix):
        self.ids = list(ids)
        self.matrix = matrix
        self.index = {m: i for i, m in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise CorruptStore("duplicate ids in store")

    @classmethod
    def open(cls, path, mmap=False) -> "EmbeddingStore":
        path = Path(path)
        with open(path, "rb") as fh:
            n, dim = _read_header(fh, path)
        expected = _HEADER.size + 4 * n * dim
        if path.stat().st_size != expected:
            raise CorruptStore(f"{path}: size {path.stat().st_size}, expected {expected}")
        if mmap:
            matrix = np.memmap(path, dtype="<f4", mode="r", offset=_HEADER.size, shape=(n, dim))
        else:
            with open(path, "rb") as fh:
                fh.seek(_HEADER.size)
                matrix = np.frombuffer(fh.read(), dtype="<f4").reshape(n, dim).astype(np.float32)
        id_file = ids_path(path)
        ids = id_file.read_text(encoding="utf-8").splitlines() if id_file.exists() else []
        if len(ids) != n:
            raise CorruptStore(f"{id_file}: {len(ids)} ids for {n} rows")
        return cls(ids, matrix)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, mol_id: str) -> np.ndarray:
        try:
            return np.asarray(self.matrix[self.index[mol_id]])
        except KeyError:
            raise MissingEmbedding(mol_id) from None

    def rows(self, mol_ids) -> np.ndarray:
        idx = []
        for m in mol_ids:
            if m not in self.index:
                raise MissingEmbedding(m)
            idx.append(self.index[m])
        return np.asarray(self.matrix[np.asarray(idx, dtype=np.int64)])

    def save(self, path) -> None:
        write_store(path, self.ids, self.matrix)
