"""Semantic deduplication inside k-means clusters.

Members of a cluster are visited most-prototypical first (descending similarity to
the centroid, ties to the lower original index). A member is dropped iff its cosine
similarity to an already kept member is strictly above the threshold, so the first
visited member of a duplicate group is its representative.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .embed_store import EmbeddingMatrix, SelectionMask
from .exceptions import ConfigError, EmptySelectionError
from .kmeans import Assignment, KMeansModel
from .workers import map_ordered

logger = logging.getLogger(__name__)

MAX_BISECTION_STEPS = 30
# clusters up to this size get a full Gram matrix per pass
GRAM_LIMIT = 4096


@dataclass(frozen=True)
class DedupConfig:
    k_dedup: int
    threshold: Optional[float] = None
    target_keep_fraction: Optional[float] = None
    iters: int = 100
    tol: float = 1e-4

    def __post_init__(self):
        if self.k_dedup < 1:
            raise ConfigError("dedup.k must be >= 1")
        if (self.threshold is None) == (self.target_keep_fraction is None):
            raise ConfigError("set exactly one of dedup.threshold and dedup.target_keep_fraction")
        if self.threshold is not None and not -1.0 <= self.threshold <= 1.0:
            raise ConfigError(f"dedup.threshold must lie in [-1, 1], got {self.threshold}")
        if self.target_keep_fraction is not None and not 0.0 < self.target_keep_fraction <= 1.0:
            raise ConfigError(f"dedup.target_keep_fraction must lie in (0, 1], got {self.target_keep_fraction}")


@dataclass(frozen=True)
class DedupResult:
    mask: SelectionMask
    threshold: float
    keep_fraction: float
    clusters: int

    def report_line(self) -> str:
        return (f"dedup: kept {len(self.mask)} ({self.keep_fraction:.4f}) "
                f"threshold={self.threshold:.6f} clusters={self.clusters}")


def visit_order(sims_to_centroid, ids=None) -> np.ndarray:
    """Descending similarity to the centroid; ties go to the lower original id."""
    sims = np.asarray(sims_to_centroid, dtype=np.float64)
    if ids is None:
        ids = np.arange(sims.size)
    return np.lexsort((ids, -sims))


def dedup_cluster(cluster_rows: np.ndarray, sims_to_centroid, threshold: float, ids=None) -> np.ndarray:
    """Local indices of the members kept, ascending."""
    n = cluster_rows.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = visit_order(sims_to_centroid, ids)
    rows = np.asarray(cluster_rows, dtype=np.float64)[order]
    dropped = np.zeros(n, dtype=bool)
    kept = []
    gram = np.clip(rows @ rows.T, -1.0, 1.0) if n <= GRAM_LIMIT else None
    for pos in range(n):
        if dropped[pos]:
            continue
        kept.append(pos)
        sims = gram[pos] if gram is not None else np.clip(rows @ rows[pos], -1.0, 1.0)
        dropped[pos + 1:] |= sims[pos + 1:] > threshold
    return np.sort(order[kept])


class DedupPlan:
    """Per-cluster member lists of a clustered matrix, reusable across thresholds."""

    def __init__(self, m, assignment, k, ids=None, threads=1):
        if assignment.nearest_cent.size != m.rows:
            raise ValueError(f"assignment covers {assignment.nearest_cent.size} rows, matrix has {m.rows}")
        self.data = m.as_float64()
        self.sims = assignment.sim_to_centroid
        self.ids = np.arange(m.rows, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        self.members = [g for g in assignment.members(k) if g.size]
        self.rows = m.rows
        self.threads = threads

    def keep_local(self, threshold):
        def _one(members):
            local = dedup_cluster(self.data[members], self.sims[members], threshold, self.ids[members])
            return members[local]

        kept = map_ordered(_one, self.members, self.threads)
        return np.sort(np.concatenate(kept)) if kept else np.zeros(0, dtype=np.int64)

    def keep_count(self, threshold: float) -> int:
        return int(self.keep_local(threshold).size)


def dedup_dataset(m: EmbeddingMatrix, model: KMeansModel, assignment: Assignment, threshold: float, ids=None,
                  threads: int = 1) -> SelectionMask:
    if m.dim != model.dim:
        raise ValueError(f"dimension mismatch: data {m.dim}, model {model.dim}")
    plan = DedupPlan(m, assignment, model.k, ids=ids, threads=threads)
    kept = plan.keep_local(threshold)
    logger.info("dedup threshold=%.6f kept %d of %d rows across %d clusters",
                threshold, kept.size, m.rows, len(plan.members))
    return SelectionMask(plan.ids[kept])


def find_threshold(m, model, assignment, target_keep_fraction, tol=1e-4, threads=1, plan=None):
    """Bisect the threshold in [-1, 1] until the keep fraction reaches the target.

    Returns the smallest tried threshold whose keep fraction is >= target, preferring
    thresholds whose fraction lies closest to the target.
    """
    if not 0.0 < target_keep_fraction <= 1.0:
        raise ConfigError(f"target keep fraction must lie in (0, 1], got {target_keep_fraction}")
    if plan is None:
        plan = DedupPlan(m, assignment, model.k, threads=threads)
    rows = plan.rows
    target_count = math.ceil(round(target_keep_fraction * rows, 9))
    counts = {}

    def keep_at(t):
        if t not in counts:
            counts[t] = plan.keep_count(t)
            logger.debug("dedup search threshold=%.9f kept=%d", t, counts[t])
        return counts[t]

    lo, hi = -1.0, 1.0
    if keep_at(hi) < target_count:
        # sims are clipped to 1, so this only happens for an inconsistent plan
        raise EmptySelectionError(f"threshold 1.0 keeps {counts[hi]} of {rows} rows, below the target")
    floor = keep_at(lo)
    if floor > target_count:
        raise EmptySelectionError(
            f"target keep fraction {target_keep_fraction} unreachable: even threshold -1 keeps "
            f"{floor} of {rows} rows (achievable floor {floor / rows:.6f})")
    if floor == target_count:
        return lo

    for _ in range(MAX_BISECTION_STEPS):
        if counts[hi] == target_count or counts[hi] - counts[lo] < tol * rows:
            break
        mid = 0.5 * (lo + hi)
        if keep_at(mid) >= target_count:
            hi = mid
        else:
            lo = mid

    eligible = [(count - target_count, t) for t, count in counts.items() if count >= target_count]
    _, best = min(eligible)
    return best


def run_dedup(m: EmbeddingMatrix, model: KMeansModel, assignment: Assignment, config: DedupConfig, ids=None,
              threads: int = 1) -> DedupResult:
    """Run the dedup stage with either a fixed threshold or a target keep fraction."""
    plan = DedupPlan(m, assignment, model.k, ids=ids, threads=threads)
    threshold = config.threshold
    if threshold is None:
        threshold = find_threshold(m, model, assignment, config.target_keep_fraction,
                                   tol=config.tol, threads=threads, plan=plan)
    kept = plan.keep_local(threshold)
    mask = SelectionMask(plan.ids[kept])
    result = DedupResult(mask=mask, threshold=threshold, keep_fraction=len(mask) / m.rows,
                         clusters=len(plan.members))
    logger.info(result.report_line())
    return result
