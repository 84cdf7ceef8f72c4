"""Config-driven dedup -> score filter -> DBP pipeline.

Config files are line oriented: ``key = value``, ``#`` starts a comment and stage keys
carry a dotted prefix (``dbp.tau = 0.1``). Every stage consumes the previous stage's
mask; masks always hold ids into the original dataset.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

from django.conf import settings

from . import kmeans
from .dbp import DbpConfig, run_dbp
from .embed_store import (
    SelectionMask, load_embeddings, load_scores, normalize_rows, subset, subset_scores, write_mask,
)
from .exceptions import ConfigError, DataFormatError, EmptySelectionError, PruningError, StageError
from .reports import StageReport, cluster_rows, emit_report, record_run
from .score_filter import ScoreFilterConfig, run_score_filter
from .semdedup import DedupConfig, run_dedup
from .workers import resolve_threads

logger = logging.getLogger(__name__)

STAGES = ('dedup', 'score', 'dbp')
STAGE_INDEX = {name: i for i, name in enumerate(STAGES)}
STAGE_NAMES = {'dedup': 'dedup', 'score': 'clipscore', 'dbp': 'dbp'}

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}

KNOWN_KEYS = {
    'paths.embeddings', 'paths.scores', 'paths.output', 'seed', 'threads', 'deterministic',
    'dedup.enabled', 'dedup.k', 'dedup.iters', 'dedup.threshold', 'dedup.target_keep_fraction', 'dedup.tol',
    'score.enabled', 'score.mode', 'score.threshold', 'score.fraction',
    'dbp.enabled', 'dbp.k', 'dbp.l', 'dbp.tau', 'dbp.n', 'dbp.keep_fraction', 'dbp.balance_ratio',
    'dbp.kmeans_iters', 'dbp.min_samples', 'dbp.selection',
}


@dataclass(frozen=True)
class PipelineConfig:
    embeddings: Path
    output: Path
    scores: Optional[Path] = None
    seed: int = 0
    threads: int = 1
    deterministic: bool = False
    dedup: Optional[DedupConfig] = None
    score: Optional[ScoreFilterConfig] = None
    dbp: Optional[DbpConfig] = None

    def __post_init__(self):
        if self.score is not None and self.scores is None:
            raise ConfigError("score stage is enabled but paths.scores is not set")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    @property
    def workers(self) -> int:
        return resolve_threads(self.threads, self.deterministic)

    def stage_seed(self, stage: str) -> int:
        return self.seed + STAGE_INDEX[stage]


def parse_config_text(text: str) -> Dict[str, str]:
    """Raw key -> value strings from the line-oriented config format."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _convert(raw, key, kind, default=None):
    if key not in raw:
        return default
    value = raw[key]
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def _stage_enabled(raw, stage):
    """Explicit <stage>.enabled wins; otherwise a stage is on when any of its keys is set."""
    explicit = _convert(raw, f"{stage}.enabled", bool)
    if explicit is not None:
        return explicit
    return any(key.startswith(f"{stage}.") for key in raw)


def build_config(raw: Dict[str, str], **overrides) -> PipelineConfig:
    """Build a PipelineConfig from raw strings; overrides (CLI flags) win over the file."""
    defaults = settings.PRUNING
    overrides = {key: value for key, value in overrides.items() if value is not None}

    embeddings = overrides.get('embeddings') or raw.get('paths.embeddings')
    if not embeddings:
        raise ConfigError("paths.embeddings is required")
    output = overrides.get('output') or raw.get('paths.output') or 'pruning-output'
    scores = overrides.get('scores') or raw.get('paths.scores')

    dedup = None
    if _stage_enabled(raw, 'dedup'):
        threshold = _convert(raw, 'dedup.threshold', float)
        target = _convert(raw, 'dedup.target_keep_fraction', float)
        dedup = DedupConfig(
            k_dedup=_convert(raw, 'dedup.k', int, defaults['DEDUP_K']),
            threshold=threshold,
            target_keep_fraction=target,
            iters=_convert(raw, 'dedup.iters', int, defaults['KMEANS_ITERS']),
            tol=_convert(raw, 'dedup.tol', float, defaults['DEDUP_TOL']),
        )

    score = None
    if _stage_enabled(raw, 'score'):
        score = ScoreFilterConfig(
            mode=raw.get('score.mode', 'absolute_threshold'),
            threshold=_convert(raw, 'score.threshold', float, defaults['SCORE_THRESHOLD']),
            fraction=_convert(raw, 'score.fraction', float, 1.0),
        )

    dbp = None
    if _stage_enabled(raw, 'dbp'):
        N = _convert(raw, 'dbp.n', int)
        keep_fraction = _convert(raw, 'dbp.keep_fraction', float)
        if N is None and keep_fraction is None:
            keep_fraction = defaults['DBP_KEEP_FRACTION']
        dbp = DbpConfig(
            k=_convert(raw, 'dbp.k', int, defaults['DBP_K']),
            l=_convert(raw, 'dbp.l', int, defaults['DBP_L']),
            tau=_convert(raw, 'dbp.tau', float, defaults['DBP_TAU']),
            N=N,
            keep_fraction=keep_fraction if N is None else None,
            balance_ratio=_convert(raw, 'dbp.balance_ratio', float, defaults['DBP_BALANCE_RATIO']),
            kmeans_iters=_convert(raw, 'dbp.kmeans_iters', int, defaults['KMEANS_ITERS']),
            min_samples=_convert(raw, 'dbp.min_samples', int, defaults['DBP_MIN_SAMPLES']),
            selection=raw.get('dbp.selection', 'hardest'),
        )

    return PipelineConfig(
        embeddings=Path(embeddings),
        output=Path(output),
        scores=Path(scores) if scores else None,
        seed=overrides.get('seed', _convert(raw, 'seed', int, defaults['SEED'])),
        threads=overrides.get('threads', _convert(raw, 'threads', int, defaults['THREADS'])),
        deterministic=overrides.get('deterministic', _convert(raw, 'deterministic', bool, False)),
        dedup=dedup,
        score=score,
        dbp=dbp,
    )


def load_config(path, **overrides) -> Tuple[PipelineConfig, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build_config(parse_config_text(text), **overrides), text


@dataclass(frozen=True, eq=False)
class PipelineResult:
    mask: SelectionMask
    reports: list
    input_size: int


def _clustered(matrix, k, iters, seed, threads):
    k = min(k, matrix.rows)
    model = kmeans.fit(matrix, k, iters=iters, seed=seed, threads=threads)
    return model, kmeans.assign(matrix, model, threads=threads)


def _dedup_stage(config, matrix, current, _scores):
    cfg = config.dedup
    model, assignment = _clustered(matrix, cfg.k_dedup, cfg.iters, config.stage_seed('dedup'), config.workers)
    result = run_dedup(matrix, model, assignment, cfg, ids=current.ids, threads=config.workers)
    metrics = {'threshold': float(result.threshold), 'keep_fraction': float(result.keep_fraction),
               'clusters': result.clusters, 'kmeans_objective': float(model.objective)}
    return result.mask, metrics, []


def _score_stage(config, _matrix, current, scores):
    result = run_score_filter(subset_scores(scores, current), config.score, ids=current.ids)
    return result.mask, {'mode': config.score.mode, 'cut_score': float(result.cut_score)}, []


def _dbp_stage(config, matrix, current, _scores):
    cfg = config.dbp
    model, assignment = _clustered(matrix, cfg.k, cfg.kmeans_iters, config.stage_seed('dbp'), config.workers)
    result = run_dbp(model, assignment, cfg, ids=current.ids, seed=config.stage_seed('dbp'),
                     threads=config.workers)
    metrics = {'N': result.N, 'lambda': float(result.allocation.lam), 'clusters': int(result.stats.sizes.size),
               'cv_before': result.cv_before, 'cv_after': result.cv_after,
               'kmeans_objective': float(model.objective)}
    return result.mask, metrics, cluster_rows(result)


_RUNNERS = {'dedup': _dedup_stage, 'score': _score_stage, 'dbp': _dbp_stage}


def run_pipeline(config: PipelineConfig, record: bool = False, config_text: str = '') -> PipelineResult:
    """Run the enabled stages in order and persist every mask and report."""
    threads = config.workers
    base = load_embeddings(config.embeddings)
    scores = None
    if config.score is not None:
        scores = load_scores(config.scores)
        if scores.rows != base.rows:
            raise DataFormatError(f"{config.scores} has {scores.rows} scores for {base.rows} embeddings")
    normalized = normalize_rows(base, threads=threads)
    config.output.mkdir(parents=True, exist_ok=True)

    current = SelectionMask.all(base.rows)
    reports = []
    try:
        for stage in STAGES:
            if getattr(config, stage) is None:
                continue
            name = STAGE_NAMES[stage]
            started = time.perf_counter()
            try:
                matrix = subset(normalized, current)
                mask, metrics, clusters = _RUNNERS[stage](config, matrix, current, scores)
                if len(mask) == 0:
                    raise EmptySelectionError("stage selected no examples")
            except (PruningError, ValueError) as exc:
                raise StageError(name, exc) from exc
            mask_path = config.output / f"{STAGE_INDEX[stage] + 1:02d}_{name}.mask"
            write_mask(mask, mask_path)
            report = StageReport(stage=name, input_size=len(current), output_size=len(mask),
                                 wall_time=time.perf_counter() - started, metrics=metrics,
                                 clusters=clusters, mask_path=str(mask_path))
            logger.info(report.summary_line())
            reports.append(report)
            current = mask
    except StageError as exc:
        emit_report(reports, config.output, error=str(exc))
        if record or settings.PRUNING['RECORD_RUNS']:
            record_run(config, reports, input_size=base.rows, config_text=config_text, error=str(exc))
        raise

    write_mask(current, config.output / 'final.mask')
    emit_report(reports, config.output)
    if record or settings.PRUNING['RECORD_RUNS']:
        record_run(config, reports, final_mask=current, input_size=base.rows, config_text=config_text)
    return PipelineResult(mask=current, reports=reports, input_size=base.rows)

