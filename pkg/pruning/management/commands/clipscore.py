from pruning.embed_store import SelectionMask, load_scores, read_mask, subset_scores, write_mask
from pruning.exceptions import EmptySelectionError
from pruning.score_filter import ABSOLUTE_THRESHOLD, TOP_FRACTION, ScoreFilterConfig, run_score_filter

from ._base import PruningCommand


class Command(PruningCommand):
    help = "Filter examples by their image-caption match score; writes a mask file and a report line."

    def add_command_arguments(self, parser):
        parser.add_argument('--scores')
        parser.add_argument('--mask', help="Restrict to the ids of an earlier mask.")
        group = parser.add_mutually_exclusive_group()
        group.add_argument('--threshold', type=float, help="Drop scores strictly below this value.")
        group.add_argument('--fraction', type=float, help="Keep this top fraction by score.")

    def handle(self, *args, **options):
        config, _ = self.load_pipeline_config(options, scores=options['scores'])
        scores_path = self.require(options, 'scores', config and config.scores)
        if options['fraction'] is not None:
            cfg = ScoreFilterConfig(mode=TOP_FRACTION, fraction=options['fraction'])
        elif options['threshold'] is not None:
            cfg = ScoreFilterConfig(mode=ABSOLUTE_THRESHOLD, threshold=options['threshold'])
        elif config is not None and config.score is not None:
            cfg = config.score
        else:
            cfg = ScoreFilterConfig()
        out = self.output_dir(options, config)

        scores = load_scores(scores_path)
        current = read_mask(options['mask'], scores.rows) if options['mask'] else SelectionMask.all(scores.rows)
        result = run_score_filter(subset_scores(scores, current), cfg, ids=current.ids)
        write_mask(result.mask, out / 'clipscore.mask')
        if len(result.mask) == 0:
            raise EmptySelectionError("score filter kept no examples")
        self.success(result.report_line())
