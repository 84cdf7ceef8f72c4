import numpy as np

from pruning.embed_store import gen_scores, gen_sphere_mixture, write_embeddings, write_scores
from pruning.exceptions import ConfigError

from ._base import PruningCommand


def _numbers(text, kind):
    try:
        return [kind(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as a comma-separated list") from None


class Command(PruningCommand):
    help = "Write a synthetic EMB1/SCR1 fixture drawn from a mixture of clusters on the sphere."

    def add_command_arguments(self, parser):
        parser.add_argument('--sizes', default='1000,100', help="Comma-separated cluster sizes.")
        parser.add_argument('--spreads', help="Comma-separated per-cluster spreads in (0, 1]; default 0.1 each.")
        parser.add_argument('--dim', type=int, default=64)
        parser.add_argument('--score-mean', type=float, default=0.3)
        parser.add_argument('--score-spread', type=float, default=0.1)

    def handle(self, *args, **options):
        sizes = _numbers(options['sizes'], int)
        spreads = _numbers(options['spreads'], float) if options['spreads'] else [0.1] * len(sizes)
        seed = self.seed(options)
        out = self.output_dir(options, default='fixture')
        try:
            matrix, labels = gen_sphere_mixture(len(sizes), options['dim'], sizes, spreads, seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        scores = gen_scores(matrix.rows, seed + 1, options['score_mean'], options['score_spread'])

        write_embeddings(matrix, out / 'embeddings.emb')
        write_scores(scores, out / 'scores.scr')
        np.savetxt(out / 'labels.txt', labels, fmt='%d')
        self.success(f"Wrote {matrix.rows} x {matrix.dim} embeddings, scores and labels to {out}.")
