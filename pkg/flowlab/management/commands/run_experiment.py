"""
Management command to run one experiment config
"""
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from flowlab.exceptions import ConfigurationError, ExperimentPhaseError
from flowlab.services import experiment_runner


class Command(BaseCommand):
    help = 'Run an experiment config (a TOML path or the name of a shipped preset)'

    def add_arguments(self, parser):
        parser.add_argument(
            'config',
            type=str,
            help='Path to a TOML config, or a preset name from FLOWLAB_PRESET_DIR'
        )
        parser.add_argument(
            '--threads',
            type=int,
            default=None,
            help='Worker threads (defaults to FLOWLAB_DEFAULT_THREADS)'
        )
        parser.add_argument(
            '--out',
            type=str,
            default=None,
            help='Output root directory (defaults to FLOWLAB_OUTPUT_ROOT)'
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=None,
            help='Seed overriding the one in the config'
        )
        parser.add_argument(
            '--trajectories',
            action='store_true',
            default=None,
            help='Also export trajectories.csv and its JSON sidecar'
        )

    def resolve(self, config):
        path = Path(config)
        if path.is_file():
            return path
        preset = Path(settings.FLOWLAB_PRESET_DIR) / f'{config}.toml'
        if preset.is_file():
            return preset
        raise CommandError(f'No config file or preset named {config!r}')

    def handle(self, *args, **options):
        threads = options.get('threads')
        if threads is not None and threads < 1:
            raise CommandError('--threads must be at least 1')
        path = self.resolve(options['config'])

        try:
            outcome = experiment_runner.run(
                path,
                output_root=options.get('out'),
                threads=threads,
                seed=options.get('seed'),
                trajectories=options.get('trajectories'),
            )
        except ConfigurationError as e:
            raise CommandError(f'Invalid config: {e}')
        except ExperimentPhaseError as e:
            raise CommandError(f'Experiment failed in phase {e.phase}: {e.cause}')

        for entry in outcome.report.entries:
            line = f'{entry.check}: {entry.verdict}'
            if entry.expected != 'pass':
                line += f' (expected {entry.expected})'
            style = self.style.SUCCESS if entry.as_expected else self.style.ERROR
            self.stdout.write(style(line))
        self.stdout.write(f'Artifacts: {outcome.output_dir}')

        if not outcome.passed:
            raise CommandError(f'Experiment {outcome.config.name} failed its checks')
        self.stdout.write(self.style.SUCCESS(f'Experiment {outcome.config.name} passed'))
