from pruning.exceptions import ConfigError
from pruning.pipeline import run_pipeline

from ._base import PruningCommand


class Command(PruningCommand):
    help = "Run the dedup -> score filter -> DBP pipeline described by a config file."

    def add_command_arguments(self, parser):
        parser.add_argument('--record', action='store_true', help="Store the run in the database.")

    def handle(self, *args, **options):
        config, text = self.load_pipeline_config(options)
        if config is None:
            raise ConfigError("--config is required")
        result = run_pipeline(config, record=options['record'], config_text=text)
        for report in result.reports:
            self.stdout.write(report.summary_line())
        self.success(f"pipeline: kept {len(result.mask)} of {result.input_size} -> {config.output / 'final.mask'}")
