"""
Management command to list the shipped experiment presets
"""
from django.core.management.base import BaseCommand, CommandError

from flowlab.exceptions import ConfigurationError
from flowlab.services.experiment_runner import list_presets


class Command(BaseCommand):
    help = 'List shipped experiment presets with the statement each one checks'

    def add_arguments(self, parser):
        parser.add_argument(
            '--preset-dir',
            type=str,
            default=None,
            help='Optional: preset directory (defaults to FLOWLAB_PRESET_DIR)'
        )

    def handle(self, *args, **options):
        try:
            presets = list_presets(options.get('preset_dir'))
        except ConfigurationError as e:
            raise CommandError(str(e))

        width = max(len(preset.name) for preset in presets)
        self.stdout.write(f'{"preset".ljust(width)}  {"kind".ljust(15)}  {"runtime".ljust(7)}  anchor')
        for preset in presets:
            self.stdout.write(
                f'{preset.name.ljust(width)}  {preset.kind.ljust(15)}  {preset.runtime.ljust(7)}  {preset.anchor}'
            )
        self.stdout.write(self.style.SUCCESS(f'\n{len(presets)} presets'))
