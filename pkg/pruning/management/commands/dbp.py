import time

from pruning import kmeans
from pruning.dbp import DbpConfig, run_dbp
from pruning.embed_store import SelectionMask, load_embeddings, normalize_rows, read_mask, subset, write_mask
from pruning.reports import StageReport, cluster_rows, emit_report

from ._base import PruningCommand


class Command(PruningCommand):
    help = "Density-based pruning: allocate per-cluster counts by complexity and keep the least prototypical examples."

    def add_command_arguments(self, parser):
        parser.add_argument('--embeddings')
        parser.add_argument('--mask', help="Restrict to the ids of an earlier mask.")
        parser.add_argument('--k', type=int)
        parser.add_argument('--l', type=int)
        parser.add_argument('--tau', type=float)
        size = parser.add_mutually_exclusive_group()
        size.add_argument('--n', type=int, help="Exact target size.")
        size.add_argument('--keep-fraction', type=float)
        parser.add_argument('--balance-ratio', type=float)
        parser.add_argument('--iters', type=int)
        parser.add_argument('--selection', choices=['hardest', 'random'])

    def handle(self, *args, **options):
        config, _ = self.load_pipeline_config(options, embeddings=options['embeddings'])
        embeddings = self.require(options, 'embeddings', config and config.embeddings)
        base = config.dbp if config and config.dbp else DbpConfig()
        N, keep_fraction = options['n'], options['keep_fraction']
        if N is None and keep_fraction is None:
            N, keep_fraction = base.N, base.keep_fraction
        cfg = DbpConfig(
            k=options['k'] or base.k,
            l=options['l'] or base.l,
            tau=options['tau'] if options['tau'] is not None else base.tau,
            N=N,
            keep_fraction=keep_fraction if N is None else None,
            balance_ratio=options['balance_ratio'] if options['balance_ratio'] is not None else base.balance_ratio,
            kmeans_iters=options['iters'] or base.kmeans_iters,
            min_samples=base.min_samples,
            selection=options['selection'] or base.selection,
        )
        threads = self.threads(options, config)
        seed = self.seed(options, config)
        out = self.output_dir(options, config)

        started = time.perf_counter()
        matrix = normalize_rows(load_embeddings(embeddings), threads=threads)
        current = read_mask(options['mask'], matrix.rows) if options['mask'] else SelectionMask.all(matrix.rows)
        matrix = subset(matrix, current)
        model = kmeans.fit(matrix, min(cfg.k, matrix.rows), iters=cfg.kmeans_iters, seed=seed, threads=threads)
        assignment = kmeans.assign(matrix, model, threads=threads)
        result = run_dbp(model, assignment, cfg, ids=current.ids, seed=seed, threads=threads)
        wall_time = time.perf_counter() - started

        write_mask(result.mask, out / 'dbp.mask')
        metrics = {'N': result.N, 'lambda': result.allocation.lam,
                   'cv_before': result.cv_before, 'cv_after': result.cv_after}
        emit_report([StageReport(stage='dbp', input_size=len(current), output_size=len(result.mask),
                                 wall_time=wall_time, metrics=metrics, clusters=cluster_rows(result))], out)
        self.success(result.report_line())
