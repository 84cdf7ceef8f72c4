import time

import numpy as np

from pruning import kmeans
from pruning.allocation import AllocationProblem, allocate
from pruning.dbp import softmax_probs
from pruning.embed_store import gen_sphere_mixture

from ._base import PruningCommand
from .gen import _numbers


def _timed(fn):
    started = time.perf_counter()
    value = fn()
    return time.perf_counter() - started, value


class Command(PruningCommand):
    help = "Time k-means fit/assign and the allocation solver at growing scales."

    def add_command_arguments(self, parser):
        parser.add_argument('--sizes', default='10000,100000')
        parser.add_argument('--dims', default='128')
        parser.add_argument('--k-values', default='500')
        parser.add_argument('--iters', type=int, default=10)
        parser.add_argument('--qp-k', default='100,10000', help="Cluster counts for the solver timing.")

    def handle(self, *args, **options):
        seed = self.seed(options)
        threads = self.threads(options)
        rows = []
        for n in _numbers(options['sizes'], int):
            for dim in _numbers(options['dims'], int):
                clusters = 32
                sizes = [n // clusters + (1 if j < n % clusters else 0) for j in range(clusters)]
                matrix, _ = gen_sphere_mixture(clusters, dim, sizes, [0.5] * clusters, seed)
                for k in _numbers(options['k_values'], int):
                    k = min(k, n)
                    fit_time, model = _timed(lambda: kmeans.fit(matrix, k, iters=options['iters'],
                                                                seed=seed, threads=threads))
                    assign_time, _ = _timed(lambda: kmeans.assign(matrix, model, threads=threads))
                    rows.append((f"fit n={n} dim={dim} k={k} iters={model.iters_run}", fit_time))
                    rows.append((f"assign n={n} dim={dim} k={k}", assign_time))

        rng = np.random.default_rng(seed)
        for k in _numbers(options['qp_k'], int):
            sizes = rng.integers(1, 1000, size=k)
            N = max(k, int(0.6 * sizes.sum()))
            prob = AllocationProblem.from_probabilities(softmax_probs(rng.random(k), 0.1), N, sizes)
            solve_time, _ = _timed(lambda: allocate(prob))
            rows.append((f"solve k={k} N={N}", solve_time))

        width = max(len(label) for label, _ in rows)
        self.stdout.write(f"{'case'.ljust(width)}  seconds")
        for label, seconds in rows:
            self.stdout.write(f"{label.ljust(width)}  {seconds:.4f}")
