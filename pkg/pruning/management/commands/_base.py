import logging
from argparse import ArgumentTypeError
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from pruning.exceptions import ConfigError, PruningError
from pruning.pipeline import load_config
from pruning.workers import resolve_threads


def non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return number


class PruningCommand(BaseCommand):
    """Base for the toolkit's subcommands: shared global flags and exit-code mapping."""

    def add_arguments(self, parser):
        parser.add_argument('--config', help="Pipeline config file (key = value lines).")
        parser.add_argument('--seed', type=non_negative_int, help="Seed for every random choice.")
        parser.add_argument('--threads', type=int, help="Worker threads for intra-stage parallelism.")
        parser.add_argument('--deterministic', action='store_true', default=None,
                            help="Single-threaded, bitwise reproducible mode.")
        parser.add_argument('--output', help="Output directory.")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def execute(self, *args, **options):
        if options.get('verbosity', 1) >= 2:
            logging.getLogger('pruning').setLevel(logging.DEBUG)
        try:
            return super().execute(*args, **options)
        except PruningError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except ValueError as exc:
            raise CommandError(str(exc), returncode=ConfigError.exit_code) from exc

    def load_pipeline_config(self, options, **extra):
        """The --config file with global flags applied, or None when no file is given."""
        if not options.get('config'):
            return None, ''
        return load_config(options['config'], seed=options.get('seed'), threads=options.get('threads'),
                           deterministic=options.get('deterministic'), output=options.get('output'), **extra)

    def seed(self, options, config=None):
        if options.get('seed') is not None:
            if options['seed'] < 0:
                raise ConfigError(f"--seed must be >= 0, got {options['seed']}")
            return options['seed']
        return config.seed if config is not None else settings.PRUNING['SEED']

    def threads(self, options, config=None):
        if config is not None and options.get('threads') is None and not options.get('deterministic'):
            return config.workers
        return resolve_threads(options.get('threads'), bool(options.get('deterministic')))

    def output_dir(self, options, config=None, default='pruning-output'):
        if options.get('output'):
            path = Path(options['output'])
        elif config is not None:
            path = config.output
        else:
            path = Path(default)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
        return path

    def require(self, options, name, config_value=None):
        value = options.get(name)
        if value is None:
            value = config_value
        if value is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required")
        return value

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
