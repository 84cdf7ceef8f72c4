import numpy as np

from pruning import kmeans
from pruning.embed_store import load_embeddings, normalize_rows

from ._base import PruningCommand


class Command(PruningCommand):
    help = "Fit spherical k-means and write the KMC1 model plus per-example assignments."

    def add_command_arguments(self, parser):
        parser.add_argument('--embeddings')
        parser.add_argument('--k', type=int, required=True)
        parser.add_argument('--iters', type=int, default=None)

    def handle(self, *args, **options):
        config, _ = self.load_pipeline_config(options, embeddings=options['embeddings'])
        embeddings = self.require(options, 'embeddings', config and config.embeddings)
        threads = self.threads(options, config)
        iters = options['iters'] or (config.dbp.kmeans_iters if config and config.dbp else 100)
        out = self.output_dir(options, config)

        matrix = normalize_rows(load_embeddings(embeddings), threads=threads)
        model = kmeans.fit(matrix, options['k'], iters=iters, seed=self.seed(options, config), threads=threads)
        assignment = kmeans.assign(matrix, model, threads=threads)

        kmeans.save_model(model, out / 'model.kmc')
        np.savetxt(out / 'assignment.txt',
                   np.column_stack([assignment.nearest_cent, assignment.sim_to_centroid]),
                   fmt=['%d', '%.9f'], header='nearest_cent sim_to_centroid')
        self.success(f"kmeans: k={model.k} iters={model.iters_run} objective={model.objective:.6f}")
