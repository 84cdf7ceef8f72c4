"""Embedding matrices, score arrays and selection masks, with their file formats.

EMB1 (embeddings): b"EMB1", u64 LE rows, u32 LE dim, u8 dtype code (0x01 = f32),
then rows*dim f32 LE values, row-major.
SCR1 (scores): b"SCR1", u64 LE rows, then rows f32 LE values.
Mask files are text: one ascending decimal index per line.
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .exceptions import DataFormatError, EmptySelectionError
from .workers import map_chunks

logger = logging.getLogger(__name__)

EMB_MAGIC = b'EMB1'
SCR_MAGIC = b'SCR1'
EMB_HEADER = struct.Struct('<4sQIB')
SCR_HEADER = struct.Struct('<4sQ')
DTYPE_F32 = 0x01
NORM_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if self.data.ndim != 2:
            raise DataFormatError(f"embedding matrix must be 2-D, got shape {self.data.shape}")
        if self.rows < 1 or self.dim < 1:
            raise DataFormatError(f"embedding matrix needs rows >= 1 and dim >= 1, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataFormatError("embedding matrix contains NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(np.asarray(self.data, dtype=np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if bad.size:
                raise DataFormatError(f"row {int(bad[0])} is flagged normalized but has norm {norms[bad[0]]:.7f}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def as_float64(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ScoreArray:
    scores: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 1:
            raise DataFormatError(f"score array must be 1-D, got shape {self.scores.shape}")
        if np.isnan(self.scores).any():
            raise DataFormatError("score array contains NaN")

    @property
    def rows(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True, eq=False)
class SelectionMask:
    """Strictly increasing ids into the ORIGINAL dataset."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids[0] < 0 or np.any(np.diff(ids) <= 0)):
            raise DataFormatError("selection mask ids must be non-negative and strictly increasing")
        object.__setattr__(self, 'ids', ids)

    @classmethod
    def all(cls, rows: int) -> "SelectionMask":
        return cls(np.arange(rows, dtype=np.int64))

    @classmethod
    def from_unsorted(cls, ids) -> "SelectionMask":
        return cls(np.unique(np.asarray(ids, dtype=np.int64)))

    def __len__(self):
        return int(self.ids.size)

    def __eq__(self, other):
        return isinstance(other, SelectionMask) and np.array_equal(self.ids, other.ids)

    def validate_for(self, rows: int) -> None:
        if self.ids.size and self.ids[-1] >= rows:
            raise DataFormatError(f"mask id {int(self.ids[-1])} out of range for {rows} rows")
        return self

    def take(self, local) -> "SelectionMask":
        """Map indices into the subset this mask selects back to original ids."""
        local = np.asarray(local, dtype=np.int64)
        if local.size and (local.min() < 0 or local.max() >= self.ids.size):
            raise DataFormatError(f"local index out of range for a mask of {self.ids.size} ids")
        return SelectionMask.from_unsorted(self.ids[local])

    def issubset(self, other: "SelectionMask") -> bool:
        return bool(np.isin(self.ids, other.ids, assume_unique=True).all())


def _read_exact(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def _check_payload(raw, header_size, count, path):
    expected = header_size + 4 * count
    if len(raw) < expected:
        raise DataFormatError(f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}",
                              offset=len(raw))
    if len(raw) > expected:
        raise DataFormatError(f"{path}: {len(raw) - expected} trailing bytes after payload", offset=expected)


def _check_finite(values, header_size, path):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise DataFormatError(f"{path}: non-finite value", offset=header_size + 4 * int(bad[0]))


def load_embeddings(path) -> EmbeddingMatrix:
    raw = _read_exact(path)
    if len(raw) < EMB_HEADER.size:
        raise DataFormatError(f"{path}: file shorter than the EMB1 header", offset=len(raw))
    magic, rows, dim, dtype = EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}", offset=0)
    if dim == 0:
        raise DataFormatError(f"{path}: dim is 0", offset=12)
    if rows == 0:
        raise DataFormatError(f"{path}: row count is 0", offset=4)
    if dtype != DTYPE_F32:
        raise DataFormatError(f"{path}: unsupported dtype code {dtype:#04x}", offset=16)
    _check_payload(raw, EMB_HEADER.size, rows * dim, path)
    values = np.frombuffer(raw, dtype='<f4', count=rows * dim, offset=EMB_HEADER.size)
    _check_finite(values, EMB_HEADER.size, path)
    logger.debug("loaded %d x %d embeddings from %s", rows, dim, path)
    return EmbeddingMatrix(values.astype(np.float32).reshape(rows, dim))


def write_embeddings(m: EmbeddingMatrix, path) -> None:
    with open(path, 'wb') as f:
        f.write(EMB_HEADER.pack(EMB_MAGIC, m.rows, m.dim, DTYPE_F32))
        f.write(np.ascontiguousarray(m.data, dtype='<f4').tobytes())


def load_scores(path) -> ScoreArray:
    raw = _read_exact(path)
    if len(raw) < SCR_HEADER.size:
        raise DataFormatError(f"{path}: file shorter than the SCR1 header", offset=len(raw))
    magic, rows = SCR_HEADER.unpack_from(raw)
    if magic != SCR_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}", offset=0)
    _check_payload(raw, SCR_HEADER.size, rows, path)
    values = np.frombuffer(raw, dtype='<f4', count=rows, offset=SCR_HEADER.size)
    bad = np.flatnonzero(np.isnan(values))
    if bad.size:
        raise DataFormatError(f"{path}: NaN score", offset=SCR_HEADER.size + 4 * int(bad[0]))
    return ScoreArray(values.astype(np.float32))


def write_scores(s: ScoreArray, path) -> None:
    with open(path, 'wb') as f:
        f.write(SCR_HEADER.pack(SCR_MAGIC, s.rows))
        f.write(np.ascontiguousarray(s.scores, dtype='<f4').tobytes())


def read_mask(path, rows: Optional[int] = None) -> SelectionMask:
    ids = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            raise DataFormatError(f"{path}:{lineno}: blank line in mask file")
        try:
            ids.append(int(line))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: not a decimal index: {line!r}") from None
    mask = SelectionMask(np.asarray(ids, dtype=np.int64))
    if rows is not None:
        mask.validate_for(rows)
    return mask


def write_mask(mask: SelectionMask, path) -> None:
    with open(path, 'w') as f:
        f.writelines(f"{i}\n" for i in mask.ids.tolist())


def normalize_rows(m: EmbeddingMatrix, threads: int = 1) -> EmbeddingMatrix:
    data = m.as_float64()

    def _chunk(start, stop):
        block = data[start:stop]
        norms = np.sqrt(np.einsum('ij,ij->i', block, block))
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DataFormatError(f"row {start + int(zero[0])} has zero norm and no direction")
        return block / norms[:, None]

    parts = map_chunks(_chunk, m.rows, threads)
    return EmbeddingMatrix(np.concatenate(parts, axis=0), normalized=True)


def subset(m: EmbeddingMatrix, mask: SelectionMask) -> EmbeddingMatrix:
    if len(mask) == 0:
        raise EmptySelectionError("cannot take an empty subset; every stage needs at least one example")
    mask.validate_for(m.rows)
    return EmbeddingMatrix(m.data[mask.ids], normalized=m.normalized)


def subset_scores(s: ScoreArray, mask: SelectionMask) -> ScoreArray:
    mask.validate_for(s.rows)
    return ScoreArray(s.scores[mask.ids])


def gen_sphere_mixture(k: int, dim: int, sizes, spreads, seed: int) -> Tuple[EmbeddingMatrix, np.ndarray]:
    """Sample a mixture of k noisy clusters on the unit sphere.

    Each point is its cluster direction plus spread * N(0, I/dim) noise, renormalized,
    so spread is the expected noise norm regardless of dim. Returns (matrix, labels).
    """
    sizes = [int(s) for s in sizes]
    spreads = [float(s) for s in spreads]
    if k < 1 or dim < 1:
        raise ValueError("k and dim must be >= 1")
    if len(sizes) != k or len(spreads) != k:
        raise ValueError(f"need {k} sizes and {k} spreads")
    if any(s < 1 for s in sizes):
        raise ValueError("every cluster size must be >= 1")
    if any(not 0.0 < s <= 1.0 for s in spreads):
        raise ValueError("spreads must lie in (0, 1]")

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((k, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    blocks = []
    for j in range(k):
        noise = rng.standard_normal((sizes[j], dim)) / np.sqrt(dim)
        blocks.append(directions[j] + spreads[j] * noise)
    points = np.concatenate(blocks, axis=0)
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    labels = np.repeat(np.arange(k, dtype=np.int64), sizes)
    return EmbeddingMatrix(points, normalized=True), labels


def gen_scores(rows: int, seed: int, mean: float = 0.3, spread: float = 0.1) -> ScoreArray:
    rng = np.random.default_rng(seed)
    return ScoreArray(np.clip(rng.normal(mean, spread, size=rows), -1.0, 1.0))
