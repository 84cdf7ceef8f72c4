import csv
import tempfile
from argparse import ArgumentTypeError
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from pruning.allocation import round_half_up
from pruning.embed_store import (
    gen_scores, gen_sphere_mixture, read_mask, write_embeddings, write_scores,
)
from pruning.exceptions import ConfigError, DataFormatError, StageError
from pruning.management.commands._base import non_negative_int
from pruning.models import ClusterResult, PruningRun, StageResult
from pruning.pipeline import build_config, load_config, parse_config_text, run_pipeline
from pruning.reports import CLUSTER_COLUMNS

FULL_CONFIG = """\
# dedup -> score -> dbp
paths.embeddings = {dir}/embeddings.emb
paths.scores = {dir}/scores.scr
paths.output = {dir}/out
seed = 3

dedup.k = 12
dedup.target_keep_fraction = 0.8

score.mode = top_fraction
score.fraction = 0.5

dbp.k = 6
dbp.l = 3
dbp.keep_fraction = 0.6
"""


class FixtureMixin:
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        matrix, _ = gen_sphere_mixture(4, 24, [300, 150, 80, 70], [0.2, 0.3, 0.5, 0.6], seed=5)
        write_embeddings(matrix, self.dir / 'embeddings.emb')
        write_scores(gen_scores(matrix.rows, seed=6), self.dir / 'scores.scr')
        self.rows = matrix.rows

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, text):
        path = self.dir / 'pipeline.conf'
        path.write_text(text.format(dir=self.dir))
        return path


class ConfigParsingTest(SimpleTestCase):
    def test_comments_and_whitespace(self):
        raw = parse_config_text("# header\n  seed = 4   # trailing\n\npaths.embeddings=/tmp/x.emb\n")
        self.assertEqual(raw, {'seed': '4', 'paths.embeddings': '/tmp/x.emb'})

    def test_unknown_duplicate_and_malformed_lines(self):
        with self.assertRaisesMessage(ConfigError, 'unknown key'):
            parse_config_text("dbp.temperature = 0.1\n")
        with self.assertRaisesMessage(ConfigError, 'duplicate key'):
            parse_config_text("seed = 1\nseed = 2\n")
        with self.assertRaisesMessage(ConfigError, 'line 1'):
            parse_config_text("seed 1\n")

    def test_stage_enabled_by_its_keys(self):
        config = build_config({'paths.embeddings': 'a.emb', 'dbp.tau': '0.2'})
        self.assertIsNone(config.dedup)
        self.assertIsNone(config.score)
        self.assertEqual(config.dbp.tau, 0.2)
        self.assertEqual(config.dbp.keep_fraction, 0.6)

    def test_explicit_enabled_wins(self):
        config = build_config({'paths.embeddings': 'a.emb', 'dbp.enabled': 'false', 'dbp.tau': '0.2'})
        self.assertIsNone(config.dbp)

    def test_overrides_win(self):
        config = build_config({'paths.embeddings': 'a.emb', 'seed': '4', 'threads': '3'}, seed=9, threads=None)
        self.assertEqual((config.seed, config.threads), (9, 3))
        self.assertEqual(build_config({'paths.embeddings': 'a.emb'}, deterministic=True).workers, 1)

    def test_bad_values(self):
        with self.assertRaisesMessage(ConfigError, 'dbp.k'):
            build_config({'paths.embeddings': 'a.emb', 'dbp.k': 'many'})
        with self.assertRaisesMessage(ConfigError, 'paths.scores'):
            build_config({'paths.embeddings': 'a.emb', 'score.threshold': '0.3'})
        with self.assertRaisesMessage(ConfigError, 'paths.embeddings'):
            build_config({'seed': '1'})
        with self.assertRaisesMessage(ConfigError, 'seed must be >= 0'):
            build_config({'paths.embeddings': 'a.emb', 'seed': '-1'})

    def test_stage_seeds_differ(self):
        config = build_config({'paths.embeddings': 'a.emb', 'seed': '10'})
        self.assertEqual([config.stage_seed(s) for s in ('dedup', 'score', 'dbp')], [10, 11, 12])

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config('/nonexistent/pipeline.conf')


class RunPipelineTest(FixtureMixin, SimpleTestCase):
    def test_no_stages_keeps_everything(self):
        config, _ = load_config(self.write_config("paths.embeddings = {dir}/embeddings.emb\n"
                                                  "paths.output = {dir}/out\n"))
        result = run_pipeline(config)
        self.assertEqual(len(result.mask), self.rows)
        self.assertEqual(read_mask(self.dir / 'out' / 'final.mask'), result.mask)
        self.assertEqual(result.reports, [])

    def test_full_pipeline_composes(self):
        config, _ = load_config(self.write_config(FULL_CONFIG), deterministic=True)
        result = run_pipeline(config)
        out = self.dir / 'out'
        dedup = read_mask(out / '01_dedup.mask')
        score = read_mask(out / '02_clipscore.mask')
        final = read_mask(out / '03_dbp.mask')

        self.assertGreaterEqual(len(dedup), int(np.ceil(round(0.8 * self.rows, 9))))
        self.assertEqual(len(score), int(np.ceil(round(0.5 * len(dedup), 9))))
        self.assertEqual(len(final), round_half_up(0.6 * len(score)))
        self.assertTrue(score.issubset(dedup))
        self.assertTrue(final.issubset(score))
        self.assertEqual(result.mask, final)
        self.assertEqual(read_mask(out / 'final.mask'), final)

        self.assertEqual([r.stage for r in result.reports], ['dedup', 'clipscore', 'dbp'])
        summary = (out / 'summary.txt').read_text().splitlines()
        self.assertEqual(len(summary), 3)
        self.assertTrue(summary[2].startswith(f"dbp: {len(score)} -> {len(final)}"))

        with open(out / 'dbp_clusters.csv', newline='') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(list(rows[0].keys()), CLUSTER_COLUMNS)
        self.assertEqual(len(rows), result.reports[2].metrics['clusters'])
        self.assertEqual(sum(int(r['x_int']) for r in rows), len(final))

    def test_deterministic_across_runs(self):
        path = self.write_config(FULL_CONFIG)
        first = run_pipeline(load_config(path, deterministic=True)[0])
        second = run_pipeline(load_config(path, deterministic=True)[0])
        self.assertEqual(first.mask, second.mask)

    def test_stage_failure_names_the_stage(self):
        config, _ = load_config(self.write_config("paths.embeddings = {dir}/embeddings.emb\n"
                                                  "paths.output = {dir}/out\n"
                                                  "dbp.k = 4\ndbp.n = 100000\n"))
        with self.assertRaises(StageError) as ctx:
            run_pipeline(config)
        self.assertEqual(ctx.exception.stage, 'dbp')
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_failed_run_still_writes_reports(self):
        config, _ = load_config(self.write_config("paths.embeddings = {dir}/embeddings.emb\n"
                                                  "paths.output = {dir}/out\n"
                                                  "dedup.k = 8\ndedup.threshold = 0.99\n"
                                                  "dbp.k = 4\ndbp.n = 100000\n"))
        with self.assertRaises(StageError):
            run_pipeline(config)
        out = self.dir / 'out'
        self.assertTrue((out / '01_dedup.mask').exists())
        self.assertFalse((out / 'final.mask').exists())
        lines = (out / 'summary.txt').read_text().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[0].startswith('dedup: '))
        self.assertTrue(lines[1].startswith("failed: stage 'dbp' failed"))

    def test_score_rows_must_match(self):
        write_scores(gen_scores(3, seed=0), self.dir / 'scores.scr')
        config, _ = load_config(self.write_config("paths.embeddings = {dir}/embeddings.emb\n"
                                                  "paths.scores = {dir}/scores.scr\n"
                                                  "paths.output = {dir}/out\n"
                                                  "score.threshold = 0.0\n"))
        with self.assertRaisesMessage(DataFormatError, "scores for"):
            run_pipeline(config)


class CommandTest(FixtureMixin, SimpleTestCase):
    def call(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, stderr=StringIO(), **options)
        return out.getvalue()

    def test_gen_writes_fixture(self):
        target = self.dir / 'fixture'
        self.call('gen', sizes='30,20', dim=8, output=str(target), seed=2)
        self.assertTrue((target / 'embeddings.emb').exists())
        self.assertTrue((target / 'scores.scr').exists())
        self.assertEqual(len((target / 'labels.txt').read_text().split()), 50)

    def test_kmeans_and_dedup(self):
        out = self.dir / 'cmd'
        self.call('kmeans', embeddings=str(self.dir / 'embeddings.emb'), k=5, output=str(out))
        self.assertTrue((out / 'model.kmc').exists())
        text = self.call('dedup', embeddings=str(self.dir / 'embeddings.emb'), k=8, threshold=0.9,
                         output=str(out))
        self.assertIn('dedup: kept', text)
        self.assertLessEqual(len(read_mask(out / 'dedup.mask')), self.rows)

    def test_clipscore_then_dbp_on_its_mask(self):
        out = self.dir / 'cmd'
        self.call('clipscore', scores=str(self.dir / 'scores.scr'), fraction=0.5, output=str(out))
        score = read_mask(out / 'clipscore.mask')
        self.assertEqual(len(score), self.rows // 2)
        self.call('dbp', embeddings=str(self.dir / 'embeddings.emb'), mask=str(out / 'clipscore.mask'),
                  k=4, l=2, n=50, output=str(out))
        final = read_mask(out / 'dbp.mask')
        self.assertEqual(len(final), 50)
        self.assertTrue(final.issubset(score))
        self.assertTrue((out / 'dbp_clusters.csv').exists())

    def test_qp_prints_allocation(self):
        problem = self.dir / 'problem.txt'
        problem.write_text("10\n5 1 4\n3 1 10\n2 1 10\n")
        text = self.call('qp', str(problem))
        self.assertEqual(text.splitlines()[1:], ['4 4', '3.5 4', '2.5 2'])

    def test_exit_codes(self):
        bad = self.dir / 'bad.emb'
        bad.write_bytes(b'XXXX' + bytes(13))
        with self.assertRaises(CommandError) as ctx:
            self.call('kmeans', embeddings=str(bad), k=2, output=str(self.dir / 'cmd'))
        self.assertEqual(ctx.exception.returncode, 3)

        problem = self.dir / 'problem.txt'
        problem.write_text("50\n5 1 4\n3 1 10\n")
        with self.assertRaises(CommandError) as ctx:
            self.call('qp', str(problem))
        self.assertEqual(ctx.exception.returncode, 4)

        config = self.write_config("paths.embeddings = {dir}/embeddings.emb\n"
                                   "paths.scores = {dir}/scores.scr\n"
                                   "paths.output = {dir}/out\n"
                                   "score.threshold = 5.0\n")
        with self.assertRaises(CommandError) as ctx:
            self.call('pipeline', config=str(config))
        self.assertEqual(ctx.exception.returncode, 5)

        with self.assertRaises(CommandError) as ctx:
            self.call('pipeline')
        self.assertEqual(ctx.exception.returncode, 2)

    def test_invalid_parameters_exit_with_config_code(self):
        embeddings = str(self.dir / 'embeddings.emb')
        for options in ({'k': 1000}, {'k': 2, 'seed': -1}, {'k': 2, 'iters': -3}):
            with self.subTest(**options):
                with self.assertRaises(CommandError) as ctx:
                    self.call('kmeans', embeddings=embeddings, output=str(self.dir / 'cmd'), **options)
                self.assertEqual(ctx.exception.returncode, 2)

    def test_seed_flag_must_be_non_negative(self):
        self.assertEqual(non_negative_int('5'), 5)
        with self.assertRaises(ArgumentTypeError):
            non_negative_int('-1')

    def test_dbp_reports_measured_time(self):
        out = self.dir / 'cmd'
        with mock.patch('pruning.management.commands.dbp.time.perf_counter', side_effect=[100.0, 102.5]):
            self.call('dbp', embeddings=str(self.dir / 'embeddings.emb'), k=4, l=2, n=50, output=str(out))
        self.assertIn('time=2.500s', (out / 'summary.txt').read_text())


class RecordRunTest(FixtureMixin, TestCase):
    def test_successful_run_is_recorded(self):
        path = self.write_config(FULL_CONFIG)
        call_command('pipeline', config=str(path), record=True, deterministic=True, stdout=StringIO())
        run = PruningRun.objects.get()
        self.assertEqual(run.status, 'succeeded')
        self.assertEqual(run.input_size, self.rows)
        self.assertEqual(run.final_size, len(read_mask(self.dir / 'out' / 'final.mask')))
        self.assertAlmostEqual(run.kept_fraction, run.final_size / self.rows)
        self.assertIn('dbp.k = 6', run.config_text)
        self.assertEqual(list(run.stages.values_list('stage', flat=True)), ['dedup', 'clipscore', 'dbp'])
        dbp = run.stages.get(stage='dbp')
        self.assertEqual(dbp.clusters.count(), dbp.metrics['clusters'])
        self.assertEqual(sum(ClusterResult.objects.filter(stage=dbp).values_list('x_int', flat=True)),
                         run.final_size)

    def test_failed_run_keeps_completed_stages(self):
        path = self.write_config("paths.embeddings = {dir}/embeddings.emb\n"
                                 "paths.scores = {dir}/scores.scr\n"
                                 "paths.output = {dir}/out\n"
                                 "score.threshold = -1.0\n"
                                 "dbp.k = 4\ndbp.n = 100000\n")
        with self.assertRaises(CommandError):
            call_command('pipeline', config=str(path), record=True, stdout=StringIO())
        run = PruningRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertIn("stage 'dbp' failed", run.error)
        self.assertIsNone(run.final_size)
        self.assertEqual(StageResult.objects.filter(run=run).count(), 1)

    def test_stage_rejects_growth(self):
        run = PruningRun.objects.create(embeddings_path='x.emb', output_dir='out')
        with self.assertRaises(ValidationError):
            StageResult.objects.create(run=run, order=0, stage='dbp', input_size=5, output_size=6, wall_time=0.1)
