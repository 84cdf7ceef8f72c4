import logging
import math
from dataclasses import dataclass

import numpy as np

from .embed_store import ScoreArray, SelectionMask
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

ABSOLUTE_THRESHOLD = 'absolute_threshold'
TOP_FRACTION = 'top_fraction'
MODES = (ABSOLUTE_THRESHOLD, TOP_FRACTION)


@dataclass(frozen=True)
class ScoreFilterConfig:
    mode: str = ABSOLUTE_THRESHOLD
    threshold: float = 0.3
    fraction: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"score.mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.mode == TOP_FRACTION and not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"score.fraction must lie in (0, 1], got {self.fraction}")
        if self.mode == ABSOLUTE_THRESHOLD and not math.isfinite(self.threshold):
            raise ConfigError("score.threshold must be finite")


@dataclass(frozen=True)
class ScoreFilterResult:
    mask: SelectionMask
    cut_score: float

    def report_line(self) -> str:
        return f"clipscore: kept {len(self.mask)} cut_score={self.cut_score:.6f}"


def keep_count(fraction: float, rows: int) -> int:
    """ceil(fraction * rows), immune to float noise such as 0.3 * 10 = 3.0000000000000004."""
    return min(rows, math.ceil(round(fraction * rows, 9)))


def filter_by_threshold(scores: ScoreArray, t: float) -> SelectionMask:
    """Keep ids whose score is >= t; only scores strictly below t are dropped."""
    return SelectionMask(np.flatnonzero(scores.scores >= t))


def filter_top_fraction(scores: ScoreArray, fraction: float) -> SelectionMask:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    count = keep_count(fraction, scores.rows)
    order = np.lexsort((np.arange(scores.rows), -scores.scores.astype(np.float64)))
    return SelectionMask(np.sort(order[:count]))


def run_score_filter(scores: ScoreArray, config: ScoreFilterConfig, ids=None) -> ScoreFilterResult:
    """Apply the configured filter to scores of the current subset; ids map back to the original rows."""
    if config.mode == TOP_FRACTION:
        local = filter_top_fraction(scores, config.fraction)
    else:
        local = filter_by_threshold(scores, config.threshold)
    kept_scores = scores.scores[local.ids]
    cut = float(kept_scores.min()) if kept_scores.size else float('nan')
    mask = local if ids is None else SelectionMask(np.asarray(ids, dtype=np.int64)[local.ids])
    result = ScoreFilterResult(mask=mask, cut_score=cut)
    logger.info("%s of %d rows (mode=%s)", result.report_line(), scores.rows, config.mode)
    return result
