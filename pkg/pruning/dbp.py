"""Density-based pruning: cluster complexity, sampling distribution and per-cluster selection.

A cluster's complexity is d_inter * d_intra, where d_intra is the mean cosine distance of
its members to the centroid and d_inter the mean cosine distance of the centroid to its l
nearest other centroids. A temperature softmax over complexities gives the share of the
target size each cluster should contribute; the allocator turns shares into counts and
the least prototypical members of every cluster are kept.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .allocation import AllocationProblem, allocate, balanced_lower_bounds, round_half_up
from .embed_store import SelectionMask
from .exceptions import AllocationInvariantError, ConfigError, EmptySelectionError
from .kmeans import Assignment, KMeansModel, centroid_neighbors
from .workers import map_ordered

logger = logging.getLogger(__name__)

HARDEST = 'hardest'
RANDOM = 'random'
STRATEGIES = (HARDEST, RANDOM)


@dataclass(frozen=True)
class DbpConfig:
    k: int = 500
    l: int = 20
    tau: float = 0.1
    N: Optional[int] = None
    keep_fraction: Optional[float] = 0.6
    balance_ratio: float = 0.0
    kmeans_iters: int = 100
    min_samples: int = 1
    selection: str = HARDEST

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("dbp.k must be >= 1")
        if self.l < 1:
            raise ConfigError(f"dbp.l must be >= 1, got {self.l}")
        if not self.tau > 0:
            raise ConfigError(f"dbp.tau must be > 0, got {self.tau}")
        if self.N is None and self.keep_fraction is None:
            raise ConfigError("set dbp.n or dbp.keep_fraction")
        if self.N is not None and self.N < 1:
            raise ConfigError(f"dbp.n must be >= 1, got {self.N}")
        if self.keep_fraction is not None and not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError(f"dbp.keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if not 0.0 <= self.balance_ratio <= 1.0:
            raise ConfigError(f"dbp.balance_ratio must lie in [0, 1], got {self.balance_ratio}")
        if self.kmeans_iters < 1:
            raise ConfigError("dbp.kmeans_iters must be >= 1")
        if self.min_samples < 1:
            raise ConfigError("dbp.min_samples must be >= 1")
        if self.selection not in STRATEGIES:
            raise ConfigError(f"dbp.selection must be one of {', '.join(STRATEGIES)}")

    def target_size(self, rows: int) -> int:
        """N when given, otherwise round(keep_fraction * rows); never above rows."""
        N = self.N if self.N is not None else round_half_up(self.keep_fraction * rows)
        if not 1 <= N <= rows:
            raise ConfigError(f"DBP target size {N} must lie in [1, {rows}]")
        return N


@dataclass(frozen=True, eq=False)
class ClusterStats:
    cluster_ids: np.ndarray
    sizes: np.ndarray
    d_intra: np.ndarray
    d_inter: np.ndarray
    complexity: np.ndarray
    probs: np.ndarray
    l: int
    tau: float


def compute_d_intra(assignment: Assignment, k: int) -> np.ndarray:
    sizes = assignment.cluster_sizes(k)
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        raise EmptySelectionError(f"cluster {int(empty[0])} has no members; drop empty clusters first")
    dist = np.bincount(assignment.nearest_cent, weights=1.0 - assignment.sim_to_centroid, minlength=k)
    return dist / sizes


def compute_d_inter(model: KMeansModel, l: int) -> np.ndarray:
    if l >= model.k:
        raise ValueError(f"l must be < k = {model.k}, got {l}")
    return np.mean(1.0 - centroid_neighbors(model, l), axis=1)


def complexity(d_inter, d_intra) -> np.ndarray:
    d_inter = np.asarray(d_inter, dtype=np.float64)
    d_intra = np.asarray(d_intra, dtype=np.float64)
    if d_inter.shape != d_intra.shape:
        raise ValueError(f"length mismatch: d_inter {d_inter.shape}, d_intra {d_intra.shape}")
    return d_inter * d_intra


def softmax_probs(C, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    z = np.asarray(C, dtype=np.float64) / tau
    e = np.exp(z - z.max())
    return e / e.sum()


def target_counts(P, N: int) -> np.ndarray:
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return np.asarray(P, dtype=np.float64) * N


def coefficient_of_variation(sizes) -> float:
    sizes = np.asarray(sizes, dtype=np.float64)
    mean = sizes.mean()
    return float(sizes.std() / mean) if mean > 0 else 0.0


def compact(model, assignment):
    """Drop empty clusters; returns the reduced model, relabelled assignment and kept cluster ids."""
    sizes = assignment.cluster_sizes(model.k)
    kept = np.flatnonzero(sizes > 0)
    if kept.size == model.k:
        return model, assignment, kept
    relabel = np.full(model.k, -1, dtype=np.int64)
    relabel[kept] = np.arange(kept.size)
    logger.info("dropping %d empty clusters before DBP statistics", model.k - kept.size)
    reduced = KMeansModel(centroids=model.centroids[kept], iters_run=model.iters_run,
                          seed=model.seed, objective=model.objective)
    return reduced, Assignment(relabel[assignment.nearest_cent], assignment.sim_to_centroid), kept


def cluster_stats(model: KMeansModel, assignment: Assignment, l: int, tau: float):
    """Complexity and sampling distribution over the non-empty clusters of a model."""
    model, assignment, cluster_ids = compact(model, assignment)
    sizes = assignment.cluster_sizes(model.k)
    d_intra = compute_d_intra(assignment, model.k)
    if model.k == 1:
        logger.warning("single non-empty cluster; d_inter is taken as 0")
        d_inter = np.zeros(1)
    else:
        if l > model.k - 1:
            logger.warning("l=%d exceeds the %d other non-empty clusters; using l=%d", l, model.k - 1, model.k - 1)
            l = model.k - 1
        d_inter = compute_d_inter(model, l)
    C = complexity(d_inter, d_intra)
    return ClusterStats(cluster_ids=cluster_ids, sizes=sizes, d_intra=d_intra, d_inter=d_inter,
                        complexity=C, probs=softmax_probs(C, tau), l=l, tau=tau), assignment


def select_per_cluster(assignment: Assignment, allocation: np.ndarray, ids=None, strategy: str = HARDEST,
                       seed: int = 0, threads: int = 1) -> SelectionMask:
    """Keep x_j members of every cluster: the least prototypical ones, or a seeded random draw."""
    x = np.asarray(allocation.x_int if hasattr(allocation, 'x_int') else allocation, dtype=np.int64)
    k = x.size
    groups = assignment.members(k)
    sims = assignment.sim_to_centroid
    if ids is None:
        ids = np.arange(len(assignment), dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    rng = np.random.default_rng(seed)
    draws = [rng.permutation(g.size) for g in groups] if strategy == RANDOM else None

    def _one(j):
        members = groups[j]
        if x[j] > members.size:
            raise AllocationInvariantError(f"cluster {j}: allocated {x[j]} but only {members.size} members")
        if strategy == RANDOM:
            return members[draws[j][:x[j]]]
        order = np.lexsort((ids[members], sims[members]))
        return members[order[:x[j]]]

    kept = map_ordered(_one, range(k), threads)
    return SelectionMask.from_unsorted(ids[np.concatenate(kept)])


@dataclass(frozen=True, eq=False)
class DbpResult:
    mask: SelectionMask
    stats: ClusterStats
    allocation: object
    N: int

    @property
    def cv_before(self) -> float:
        return coefficient_of_variation(self.stats.sizes)

    @property
    def cv_after(self) -> float:
        return coefficient_of_variation(self.allocation.x_int)

    def report_line(self) -> str:
        return (f"dbp: kept {len(self.mask)} of {int(self.stats.sizes.sum())} "
                f"clusters={self.stats.sizes.size} lambda={self.allocation.lam:.6g} "
                f"cv_before={self.cv_before:.4f} cv_after={self.cv_after:.4f}")


def run_dbp(model: KMeansModel, assignment: Assignment, config: DbpConfig, ids=None, seed: int = 0,
            threads: int = 1) -> DbpResult:
    """Allocate and select on an already clustered subset."""
    rows = len(assignment)
    N = config.target_size(rows)
    stats, assignment = cluster_stats(model, assignment, config.l, config.tau)
    lb = balanced_lower_bounds(stats.sizes, N, config.balance_ratio, config.min_samples)
    prob = AllocationProblem(q=target_counts(stats.probs, N), lb=lb, ub=stats.sizes, N=N)
    allocation = allocate(prob)
    mask = select_per_cluster(assignment, allocation, ids=ids, strategy=config.selection,
                              seed=seed, threads=threads)
    result = DbpResult(mask=mask, stats=stats, allocation=allocation, N=N)
    logger.info(result.report_line())
    return result
