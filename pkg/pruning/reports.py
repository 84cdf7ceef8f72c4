"""Stage reports: the summary text, the per-cluster CSV and the optional database record."""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from django.db import transaction
from django.utils import timezone

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

CLUSTER_COLUMNS = ['cluster_id', 'M_j', 'd_inter', 'd_intra', 'C_j', 'P_j', 'q_j', 'x_real', 'x_int',
                   'original_size', 'pruned_size']


@dataclass
class StageReport:
    stage: str
    input_size: int
    output_size: int
    wall_time: float
    metrics: dict = field(default_factory=dict)
    clusters: list = field(default_factory=list)
    mask_path: str = ''

    def __post_init__(self):
        if self.output_size > self.input_size:
            raise ValueError(f"{self.stage}: output size {self.output_size} exceeds input size {self.input_size}")

    def summary_line(self) -> str:
        parts = [f"{self.stage}: {self.input_size} -> {self.output_size}", f"time={self.wall_time:.3f}s"]
        parts += [f"{key}={_fmt(value)}" for key, value in self.metrics.items()]
        return ' '.join(parts)


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cluster_rows(result, pruned_sizes=None) -> List[dict]:
    """Per-cluster CSV rows for a DBP result, keyed by the original cluster id."""
    stats, allocation = result.stats, result.allocation
    if pruned_sizes is None:
        pruned_sizes = allocation.x_int
    rows = []
    for j in range(stats.sizes.size):
        rows.append({
            'cluster_id': int(stats.cluster_ids[j]),
            'M_j': int(stats.sizes[j]),
            'd_inter': float(stats.d_inter[j]),
            'd_intra': float(stats.d_intra[j]),
            'C_j': float(stats.complexity[j]),
            'P_j': float(stats.probs[j]),
            'q_j': float(stats.probs[j] * result.N),
            'x_real': float(allocation.x_real[j]),
            'x_int': int(allocation.x_int[j]),
            'original_size': int(stats.sizes[j]),
            'pruned_size': int(pruned_sizes[j]),
        })
    return rows


def write_cluster_csv(rows: List[dict], path) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=CLUSTER_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (f"{value:.12g}" if isinstance(value, float) else value)
                             for key, value in row.items()})


def emit_report(reports: List[StageReport], output_dir, error: Optional[str] = None) -> List[Path]:
    """Write summary.txt plus one <stage>_clusters.csv per stage with cluster rows.

    A failed run still reports the stages that finished; the error goes on the last line.
    """
    output_dir = Path(output_dir)
    written = []
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        summary = output_dir / 'summary.txt'
        lines = [report.summary_line() for report in reports]
        if error:
            lines.append(f"failed: {error}")
        summary.write_text('\n'.join(lines) + '\n')
        written.append(summary)
        for report in reports:
            if report.clusters:
                path = output_dir / f"{report.stage}_clusters.csv"
                write_cluster_csv(report.clusters, path)
                written.append(path)
    except OSError as exc:
        raise ConfigError(f"cannot write reports to {output_dir}: {exc}") from exc
    logger.info("wrote %d report files to %s", len(written), output_dir)
    return written


def record_run(config, reports: List[StageReport], final_mask=None, input_size: int = 0, config_text: str = '',
               error: Optional[str] = None):
    """Persist a pipeline run with its stage and cluster rows."""
    from .models import ClusterResult, PruningRun, StageResult

    with transaction.atomic():
        run = PruningRun.objects.create(
            config_text=config_text,
            embeddings_path=str(config.embeddings),
            output_dir=str(config.output),
            seed=config.seed,
            threads=config.threads,
            deterministic=config.deterministic,
            input_size=input_size,
        )
        for order, report in enumerate(reports):
            stage = StageResult.objects.create(
                run=run,
                order=order,
                stage=report.stage,
                input_size=report.input_size,
                output_size=report.output_size,
                wall_time=report.wall_time,
                metrics=report.metrics,
                mask_path=report.mask_path,
            )
            ClusterResult.objects.bulk_create([
                ClusterResult(
                    stage=stage,
                    cluster_id=row['cluster_id'],
                    size=row['M_j'],
                    d_inter=row['d_inter'],
                    d_intra=row['d_intra'],
                    complexity=row['C_j'],
                    probability=row['P_j'],
                    target=row['q_j'],
                    x_real=row['x_real'],
                    x_int=row['x_int'],
                )
                for row in report.clusters
            ])
        run.status = 'failed' if error else 'succeeded'
        run.error = error
        run.final_size = len(final_mask) if final_mask is not None else None
        run.finished_at = timezone.now()
        run.save()
    return run
