from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, List, Optional, Tuple

from django.conf import settings


def resolve_threads(threads: Optional[int] = None, deterministic: bool = False) -> int:
    """Worker count for intra-stage parallelism; deterministic mode is single-threaded."""
    if deterministic:
        return 1
    if threads is None:
        threads = settings.PRUNING['THREADS']
    return max(1, int(threads))


def chunk_bounds(n: int, parts: int) -> List[Tuple[int, int]]:
    """Contiguous [start, stop) ranges covering range(n); depends only on (n, parts)."""
    parts = max(1, min(parts, n)) if n else 1
    base, extra = divmod(n, parts)
    bounds = []
    start = 0
    for i in range(parts):
        stop = start + base + (1 if i < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def map_ordered(fn: Callable, items, threads: int = 1) -> list:
    """Apply fn to every item, returning results in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def map_chunks(fn: Callable[[int, int], Any], n: int, threads: int = 1) -> list:
    """Run fn(start, stop) over row chunks and return the per-chunk results in chunk order."""
    bounds = chunk_bounds(n, threads)
    return map_ordered(lambda b: fn(*b), bounds, threads)
