"""Spherical k-means on unit-norm embeddings.

Lloyd iterations with cosine similarity: every point joins its max-similarity
centroid (ties go to the lower cluster id) and every centroid becomes the
normalized mean of its members. Assignment is exact, no approximate index.
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .embed_store import NORM_TOL, EmbeddingMatrix
from .exceptions import ConfigError, DataFormatError
from .workers import map_chunks

logger = logging.getLogger(__name__)

MODEL_MAGIC = b'KMC1'
MODEL_HEADER = struct.Struct('<4sQIQId')
SIM_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class KMeansModel:
    centroids: np.ndarray
    iters_run: int
    seed: int
    objective: float
    trace: tuple = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True, eq=False)
class Assignment:
    nearest_cent: np.ndarray
    sim_to_centroid: np.ndarray

    def __len__(self):
        return int(self.nearest_cent.size)

    def cluster_sizes(self, k: int) -> np.ndarray:
        return np.bincount(self.nearest_cent, minlength=k)

    def members(self, k: int) -> List[np.ndarray]:
        """Member row indices per cluster, each list in ascending row order."""
        order = np.argsort(self.nearest_cent, kind='stable')
        bounds = np.searchsorted(self.nearest_cent[order], np.arange(k + 1))
        return [order[bounds[j]:bounds[j + 1]] for j in range(k)]


def _require_normalized(m):
    if not m.normalized:
        raise ValueError("spherical k-means needs a normalized embedding matrix")


def _assign_rows(x, centroids, threads):
    def _chunk(start, stop):
        sims = x[start:stop] @ centroids.T
        labels = np.argmax(sims, axis=1)
        best = sims[np.arange(stop - start), labels]
        return labels, best

    parts = map_chunks(_chunk, x.shape[0], threads)
    labels = np.concatenate([p[0] for p in parts]).astype(np.int64)
    sims = np.clip(np.concatenate([p[1] for p in parts]), -1.0, 1.0)
    return labels, sims


def _cluster_sums(x, labels, k, threads):
    def _chunk(start, stop):
        lab = labels[start:stop]
        order = np.argsort(lab, kind='stable')
        starts = np.searchsorted(lab[order], np.arange(k))
        counts = np.bincount(lab, minlength=k)
        sums = np.zeros((k, x.shape[1]))
        present = counts > 0
        if present.any():
            reduced = np.add.reduceat(x[start:stop][order], starts[present], axis=0)
            sums[present] = reduced
        return sums, counts

    sums = np.zeros((k, x.shape[1]))
    counts = np.zeros(k, dtype=np.int64)
    for part_sums, part_counts in map_chunks(_chunk, x.shape[0], threads):
        sums += part_sums
        counts += part_counts
    return sums, counts


def _update_centroids(x, labels, sims, centroids, threads):
    k = centroids.shape[0]
    sums, counts = _cluster_sums(x, labels, k, threads)
    norms = np.linalg.norm(sums, axis=1)
    updated = centroids.copy()
    live = (counts > 0) & (norms > 0)
    updated[live] = sums[live] / norms[live, None]

    empty = np.flatnonzero(counts == 0)
    if empty.size:
        # worst-fit points first, ties to the lower row id
        worst = np.lexsort((np.arange(sims.size), sims))[:empty.size]
        updated[empty] = x[worst]
        logger.debug("re-seeded %d empty clusters from worst-fit points", empty.size)
    return updated


def fit(m: EmbeddingMatrix, k: int, iters: int = 100, seed: int = 0, threads: int = 1) -> KMeansModel:
    _require_normalized(m)
    if not 1 <= k <= m.rows:
        raise ConfigError(f"k must lie in [1, {m.rows}], got {k}")
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")

    x = m.as_float64()
    rng = np.random.default_rng(seed)
    init = rng.choice(m.rows, size=k, replace=False)
    centroids = x[init].copy()
    labels = None
    trace = []
    iters_run = 0
    converged = False

    for it in range(iters):
        new_labels, sims = _assign_rows(x, centroids, threads)
        trace.append(float(sims.mean()))
        iters_run = it + 1
        logger.debug("kmeans iter %d objective %.9f", iters_run, trace[-1])
        if labels is not None and np.array_equal(labels, new_labels):
            converged = True
            break
        labels = new_labels
        centroids = _update_centroids(x, labels, sims, centroids, threads)

    if not converged:
        _, sims = _assign_rows(x, centroids, threads)
        trace.append(float(sims.mean()))

    model = KMeansModel(centroids=centroids, iters_run=iters_run, seed=seed,
                        objective=trace[-1], trace=tuple(trace))
    logger.info("kmeans k=%d rows=%d iters=%d objective=%.6f", k, m.rows, iters_run, model.objective)
    return model


def assign(m: EmbeddingMatrix, model: KMeansModel, threads: int = 1) -> Assignment:
    _require_normalized(m)
    if m.dim != model.dim:
        raise ValueError(f"dimension mismatch: data {m.dim}, model {model.dim}")
    labels, sims = _assign_rows(m.as_float64(), model.centroids, threads)
    return Assignment(nearest_cent=labels, sim_to_centroid=sims)


def centroid_similarities(model: KMeansModel) -> np.ndarray:
    return np.clip(model.centroids @ model.centroids.T, -1.0, 1.0)


def centroid_neighbors(model: KMeansModel, l: int) -> np.ndarray:
    """Similarities of each centroid's l nearest other centroids, descending."""
    if not 1 <= l <= model.k - 1:
        raise ValueError(f"l must lie in [1, {model.k - 1}], got {l}")
    sims = centroid_similarities(model)
    np.fill_diagonal(sims, -np.inf)
    top = -np.sort(-sims, axis=1)[:, :l]
    return top


def save_model(model: KMeansModel, path) -> None:
    with open(path, 'wb') as f:
        f.write(MODEL_HEADER.pack(MODEL_MAGIC, model.k, model.dim, model.seed, model.iters_run, model.objective))
        f.write(np.ascontiguousarray(model.centroids, dtype='<f4').tobytes())


def load_model(path) -> KMeansModel:
    raw = Path(path).read_bytes()
    if len(raw) < MODEL_HEADER.size:
        raise DataFormatError(f"{path}: file shorter than the KMC1 header", offset=len(raw))
    magic, k, dim, seed, iters_run, objective = MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}", offset=0)
    expected = MODEL_HEADER.size + 4 * k * dim
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, got {len(raw)}", offset=min(len(raw), expected))
    centroids = np.frombuffer(raw, dtype='<f4', offset=MODEL_HEADER.size).astype(np.float64).reshape(k, dim)
    norms = np.linalg.norm(centroids, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise DataFormatError(f"{path}: centroids are not unit norm")
    return KMeansModel(centroids=centroids, iters_run=iters_run, seed=seed, objective=objective)
