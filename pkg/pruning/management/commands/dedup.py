from pruning import kmeans
from pruning.embed_store import SelectionMask, load_embeddings, normalize_rows, read_mask, subset, write_mask
from pruning.semdedup import DedupConfig, run_dedup

from ._base import PruningCommand


class Command(PruningCommand):
    help = "Semantic deduplication inside k-means clusters; writes a mask file and a report line."

    def add_command_arguments(self, parser):
        parser.add_argument('--embeddings')
        parser.add_argument('--mask', help="Restrict to the ids of an earlier mask.")
        parser.add_argument('--k', type=int)
        parser.add_argument('--iters', type=int)
        group = parser.add_mutually_exclusive_group()
        group.add_argument('--threshold', type=float)
        group.add_argument('--target', type=float, help="Target keep fraction in (0, 1].")

    def handle(self, *args, **options):
        config, _ = self.load_pipeline_config(options, embeddings=options['embeddings'])
        embeddings = self.require(options, 'embeddings', config and config.embeddings)
        base = config.dedup if config and config.dedup else None
        threshold, target = options['threshold'], options['target']
        if threshold is None and target is None and base is not None:
            threshold, target = base.threshold, base.target_keep_fraction
        cfg = DedupConfig(
            k_dedup=self.require(options, 'k', base and base.k_dedup),
            threshold=threshold,
            target_keep_fraction=target,
            iters=options['iters'] or (base.iters if base else 100),
            tol=base.tol if base else 1e-4,
        )
        threads = self.threads(options, config)
        out = self.output_dir(options, config)

        matrix = normalize_rows(load_embeddings(embeddings), threads=threads)
        current = read_mask(options['mask'], matrix.rows) if options['mask'] else SelectionMask.all(matrix.rows)
        matrix = subset(matrix, current)
        model = kmeans.fit(matrix, min(cfg.k_dedup, matrix.rows), iters=cfg.iters,
                           seed=self.seed(options, config), threads=threads)
        assignment = kmeans.assign(matrix, model, threads=threads)
        result = run_dedup(matrix, model, assignment, cfg, ids=current.ids, threads=threads)

        write_mask(result.mask, out / 'dedup.mask')
        self.success(result.report_line())
